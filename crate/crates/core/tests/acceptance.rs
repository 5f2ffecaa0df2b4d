//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print;
//! exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use corrseg::backends::registry_lookup;
use corrseg::clustering::{co_cluster, KMeansOptions};
use corrseg::correspondence::{correspond, flip_prompts, Flip, FlipAxis, Heatmap};
use corrseg::descriptors::{aggregate_feature_samples, log_bin_enrich, LogBinParams};
use corrseg::eval::{run_eval, run_robustness, EvalOptions, TaskManifest};
use corrseg::metrics::{
    aggregate_report, dice, localization_error, multiple_correlation, prompt_accuracy, NedFlag, TargetMetrics,
};
use corrseg::model::{upsample_bilinear, FeatureGrid, PixelFeatureMap, Point, Polarity};
use corrseg::segmentation::similarity_threshold_mask;
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn correspondence_oracle() -> Check {
    let mut rng = rng(100);
    let started = Instant::now();
    for trial in 0..100 {
        let template = random_map(&mut rng, 32, 32, 16);
        let target = random_map(&mut rng, 32, 32, 16);
        let prompts = random_prompts(&mut rng, 32, 32, 5, 3);
        let matches = correspond(&template, &prompts, &target).map_err(|e| e.to_string())?;
        for m in &matches {
            let (want, _) = brute_force_argmax(&template, m.source, &target);
            ensure(m.target == want, format!("trial {trial}: {:?} vs oracle {want:?}", m.target))?;
        }
    }
    // quantized features force exact ties; the first row-major maximum wins
    for trial in 0..100 {
        let q = |rng: &mut rand_chacha::ChaCha8Rng| -> PixelFeatureMap {
            let data = (0..32 * 32 * 16).map(|_| rng.random_range(0..2) as f64).collect();
            PixelFeatureMap::new(32, 32, 16, data).unwrap()
        };
        let (template, target) = (q(&mut rng), q(&mut rng));
        let prompts = random_prompts(&mut rng, 32, 32, 5, 3);
        for m in correspond(&template, &prompts, &target).map_err(|e| e.to_string())? {
            let (want, _) = brute_force_argmax(&template, m.source, &target);
            ensure(m.target == want, format!("tie trial {trial}: {:?} vs oracle {want:?}", m.target))?;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("200 trials exact, {:.2}s", elapsed.as_secs_f64()))
}

fn self_correspondence() -> Check {
    let mut rng = rng(101);
    for trial in 0..20 {
        let map = random_map(&mut rng, 24, 20, 12);
        let prompts = random_prompts(&mut rng, 24, 20, 8, 0);
        let matches = correspond(&map, &prompts, &map).map_err(|e| e.to_string())?;
        for m in &matches {
            ensure(m.similarity == 1.0, format!("trial {trial}: similarity {}", m.similarity))?;
        }
        let ned = localization_error(&matches, &prompts.positive, map.dims()).map_err(|e| e.to_string())?;
        ensure(ned.mean == 0.0, format!("trial {trial}: ned {}", ned.mean))?;
    }
    Ok("20 maps, NED 0.0, similarity 1.0".into())
}

fn flip_equivariance() -> Check {
    let mut rng = rng(102);
    for trial in 0..50 {
        let axis = if trial % 2 == 0 { FlipAxis::Horizontal } else { FlipAxis::Vertical };
        let (h, w) = (rng.random_range(4..24), rng.random_range(4..24));
        let template = random_map(&mut rng, h, w, 8);
        let target = random_map(&mut rng, h, w, 8);
        let prompts = random_prompts(&mut rng, h, w, 3, 2);
        let base = correspond(&template, &prompts, &target).map_err(|e| e.to_string())?;
        let flipped = correspond(
            &template.flipped(axis),
            &flip_prompts(&prompts, (h, w), axis),
            &target.flipped(axis),
        )
        .map_err(|e| e.to_string())?;
        for (a, b) in base.iter().zip(&flipped) {
            ensure(a.target.flipped((h, w), axis) == b.target, format!("trial {trial}"))?;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = TaskManifest::load(write_localization_task(dir.path(), 103, "d2b14")).map_err(|e| e.to_string())?;
    let summary = run_robustness(&manifest, &[FlipAxis::Horizontal, FlipAxis::Vertical], &EvalOptions::default())
        .map_err(|e| e.to_string())?;
    ensure(summary.rows.len() == 3, "expected baseline, h, v rows")?;
    for row in &summary.rows {
        ensure(row.ned_deviation == Some(0.0), format!("{} deviation {:?}", row.variant, row.ned_deviation))?;
    }
    Ok("50 flipped triples exact; robustness deviation 0".into())
}

fn end_to_end_fixtures() -> Check {
    let mut cells = 0;
    for seed in 0..12 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let fx = write_segmentation_task(dir.path(), 200 + seed, 3, "d2s14");
        let manifest = TaskManifest::load(&fx.manifest).map_err(|e| e.to_string())?;
        let summary = run_eval(&manifest, &EvalOptions::default()).map_err(|e| e.to_string())?;
        for c in &summary.cells {
            ensure(
                c.dice == Some(1.0) && c.acc_pos == Some(1.0) && c.acc_neg == Some(1.0),
                format!("fixture {seed} {}: {:?}", c.target, c),
            )?;
            cells += 1;
        }
    }
    Ok(format!("12 fixtures, {cells} cells at Dice = Acc+ = Acc- = 1"))
}

fn metric_oracles() -> Check {
    let mut rng = rng(104);
    for i in 0..1000 {
        let (h, w) = (rng.random_range(1..10), rng.random_range(1..10));
        let (da, db) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let a = random_mask(&mut rng, h, w, da);
        let b = random_mask(&mut rng, h, w, db);
        ensure(dice(&a, &b).unwrap() == brute_dice(&a, &b), format!("dice instance {i}"))?;

        let (n, m) = (rng.random_range(0..5), rng.random_range(0..5));
        let matches: Vec<_> = (0..n + m)
            .map(|k| {
                let pol = if k < n { Polarity::Positive } else { Polarity::Negative };
                match_at(Point::new(rng.random_range(0..h), rng.random_range(0..w)), pol)
            })
            .collect();
        let acc = prompt_accuracy(&matches, &a).unwrap();
        let mut pos_in = 0;
        let mut neg_out = 0;
        for (k, mt) in matches.iter().enumerate() {
            let inside = a.get(mt.target.row, mt.target.col);
            if k < n && inside {
                pos_in += 1;
            }
            if k >= n && !inside {
                neg_out += 1;
            }
        }
        ensure(
            acc.positive_value() == (n > 0).then(|| pos_in as f64 / n as f64)
                && acc.negative_value() == (m > 0).then(|| neg_out as f64 / m as f64),
            format!("accuracy instance {i}"),
        )?;

        let k = rng.random_range(1..5);
        let gts: Vec<Point> = (0..k).map(|_| Point::new(rng.random_range(0..h), rng.random_range(0..w))).collect();
        let preds: Vec<_> = (0..k)
            .map(|_| match_at(Point::new(rng.random_range(0..h), rng.random_range(0..w)), Polarity::Positive))
            .collect();
        let ned = localization_error(&preds, &gts, (h, w)).unwrap().mean;
        let mut total = 0.0;
        for (p, g) in preds.iter().zip(&gts) {
            let dr = p.target.row as f64 - g.row as f64;
            let dc = p.target.col as f64 - g.col as f64;
            total += (dr * dr + dc * dc).sqrt() / ((h * h + w * w) as f64).sqrt();
        }
        ensure((ned - total / k as f64).abs() < 1e-12, format!("ned instance {i}"))?;
    }
    let worked = localization_error(
        &[match_at(Point::new(3, 4), Polarity::Positive)],
        &[Point::new(0, 0)],
        (100, 100),
    )
    .unwrap()
    .mean;
    ensure((worked - 5.0 / 20000f64.sqrt()).abs() < 1e-12, format!("worked value {worked}"))?;
    Ok(format!("1000 instances; worked NED {worked:.6}"))
}

fn report_thresholds() -> Check {
    let cell = |model: &str, ned: f64| TargetMetrics {
        task: "knee".into(),
        model: model.into(),
        target: format!("t{ned}"),
        ned: Some(ned),
        ..Default::default()
    };
    let report = aggregate_report(&[cell("best", 0.034), cell("mid", 0.07), cell("worst", 0.134)]);
    let flags: Vec<_> = report.rows.iter().map(|r| r.ned_flag).collect();
    ensure(
        flags == [Some(NedFlag::Acceptable), Some(NedFlag::Intermediate), Some(NedFlag::Worse)],
        format!("{flags:?}"),
    )?;
    let csv = report.to_csv().map_err(|e| e.to_string())?;
    ensure(csv.contains(",acceptable") && csv.contains(",worse"), "csv flags")?;
    ensure(NedFlag::classify(0.05) == NedFlag::Intermediate && NedFlag::classify(0.1) == NedFlag::Intermediate, "boundaries")?;
    Ok("0.034 acceptable, 0.134 worse".into())
}

fn percentile_mask() -> Check {
    let mut rng = rng(105);
    let mut values: Vec<f64> = (0..100).map(|i| -0.99 + 0.0198 * i as f64).collect();
    values.shuffle(&mut rng);
    let heat = Heatmap::new(10, 10, values).map_err(|e| e.to_string())?;
    let n = similarity_threshold_mask(std::slice::from_ref(&heat), 0.8).map_err(|e| e.to_string())?.count();
    ensure(n == 21, format!("selected {n}"))?;
    for trial in 0..50 {
        let values: Vec<f64> = (0..150).map(|_| rng.random_range(-1.0..1.0)).collect();
        let heat = Heatmap::new(10, 15, values).unwrap();
        let mut prev = usize::MAX;
        for step in 1..100 {
            let count = similarity_threshold_mask(std::slice::from_ref(&heat), step as f64 / 100.0)
                .unwrap()
                .count();
            ensure(count <= prev, format!("heatmap {trial} grew at p={}", step as f64 / 100.0))?;
            prev = count;
        }
    }
    Ok("21 of 100 at p=0.80; monotone over 50 heatmaps".into())
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn kmeans() -> Check {
    let mut rng = rng(106);
    let maps = [random_map(&mut rng, 8, 8, 4), random_map(&mut rng, 5, 9, 4)];
    let one = co_cluster(&maps, 1, 1, KMeansOptions::default()).map_err(|e| e.to_string())?;
    let n = (64 + 45) as f64;
    for k in 0..4 {
        let mean: f64 = maps.iter().flat_map(|m| m.pixels().map(move |p| p[k])).sum::<f64>() / n;
        ensure((one.centroid(0)[k] - mean).abs() < 1e-9, "k=1 centroid")?;
    }
    for seed in 0..20u64 {
        let mut rng = common::rng(5000 + seed);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for cloud in 0..2u32 {
            for _ in 0..50 {
                data.push(10.0 * cloud as f64 + gaussian(&mut rng));
                data.extend((0..2).map(|_| gaussian(&mut rng)));
                truth.push(cloud);
            }
        }
        let map = PixelFeatureMap::new(10, 10, 3, data).unwrap();
        let res = co_cluster(&[map], 2, seed, KMeansOptions::default()).map_err(|e| e.to_string())?;
        let ari = adjusted_rand(res.label_maps[0].labels(), &truth);
        ensure(ari == 1.0, format!("seed {seed}: ARI {ari}"))?;
        for pair in res.inertia_history.windows(2) {
            ensure(pair[1] <= pair[0] * (1.0 + 1e-12), format!("seed {seed}: inertia rose"))?;
        }
    }
    Ok("k=1 mean; ARI 1.0 for 20 seeds; inertia non-increasing".into())
}

fn correlation() -> Check {
    let mut rng = rng(107);
    let pos: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let neg: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let d: Vec<f64> = pos.iter().zip(&neg).map(|(p, n)| 0.2 + 0.6 * p + 0.15 * n).collect();
    let r = multiple_correlation(&pos, &neg, &d).map_err(|e| e.to_string())?;
    ensure((r - 1.0).abs() < 1e-9, format!("R = {r}"))?;
    let z = multiple_correlation(&pos, &neg, &[0.5; 40]).map_err(|e| e.to_string())?;
    ensure(z == 0.0, format!("zero-variance R = {z}"))?;
    Ok(format!("R = {r:.12}; degenerate R = 0"))
}

fn log_binning() -> Check {
    let mut rng = rng(108);
    let grid = random_grid(&mut rng, 6, 6, 5);
    for levels in 1..4 {
        let out = log_bin_enrich(&grid, LogBinParams::new(levels).unwrap()).unwrap();
        ensure(out.channels() == 5 * (1 + 8 * levels), format!("L={levels}: {} channels", out.channels()))?;
    }
    let v = [1.0, 2.0, -2.0];
    let constant = FeatureGrid::with_uniform_stride(5, 5, 3, 1, (5, 5), v.repeat(25)).unwrap();
    let out = log_bin_enrich(&constant, LogBinParams::default()).unwrap();
    for block in out.cell(2, 2).chunks_exact(3) {
        for k in 0..3 {
            ensure((block[k] - v[k] / (3.0 * 17f64.sqrt())).abs() < 1e-12, "constant-field oracle")?;
        }
    }
    for trial in 0..20 {
        let t = random_grid(&mut rng, 10, 10, 6);
        let s = random_grid(&mut rng, 10, 10, 6);
        let factor = rng.random_range(0.01..50.0);
        let scale = |g: &FeatureGrid| FeatureGrid::new(g.geometry(), g.data().iter().map(|x| x * factor).collect()).unwrap();
        let prompts = random_prompts(&mut rng, 10, 10, 4, 2);
        let run = |t: &FeatureGrid, s: &FeatureGrid| {
            let p = LogBinParams::default();
            correspond(
                &upsample_bilinear(&log_bin_enrich(t, p).unwrap()),
                &prompts,
                &upsample_bilinear(&log_bin_enrich(s, p).unwrap()),
            )
            .unwrap()
        };
        let a = run(&t, &s);
        let b = run(&scale(&t), &scale(&s));
        ensure(
            a.iter().zip(&b).all(|(x, y)| x.target == y.target),
            format!("trial {trial}: rescale by {factor} moved a match"),
        )?;
    }
    Ok("D(1+8L) channels; constant oracle; 20 rescalings".into())
}

fn dfg1_and_aggregation() -> Check {
    let mut rng = rng(109);
    for _ in 0..20 {
        let (r, c, d) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let grid = random_grid(&mut rng, r, c, d);
        let bytes = grid.to_dfg1_bytes();
        let back = FeatureGrid::from_dfg1_bytes(&bytes).map_err(|e| e.to_string())?;
        ensure(back == grid && back.to_dfg1_bytes() == bytes, "round trip")?;
    }
    let samples: Vec<FeatureGrid> = (0..8).map(|_| random_grid(&mut rng, 6, 7, 9)).collect();
    let agg = aggregate_feature_samples(&samples).map_err(|e| e.to_string())?;
    for i in 0..agg.data().len() {
        let mean = samples.iter().map(|g| g.data()[i]).sum::<f64>() / 8.0;
        ensure((agg.data()[i] - mean).abs() < 1e-12, "sample mean")?;
    }
    Ok("20 bit-exact round trips; 8-sample mean".into())
}

fn registry_layers() -> Check {
    for id in ["d1s8", "d1s16", "d1b8", "d1b16", "d2s14", "d2b14"] {
        let layer = registry_lookup(id).map_err(|e| e.to_string())?.embedding_layer;
        ensure(layer == Some(11), format!("{id}: {layer:?}"))?;
    }
    ensure(registry_lookup("d2l14").unwrap().embedding_layer == Some(23), "d2l14")?;
    ensure(registry_lookup("d2g14").unwrap().embedding_layer == Some(39), "d2g14")?;
    Ok("11 / 23 / 39".into())
}

fn main() {
    let started = Instant::now();
    let checks: [(&str, fn() -> Check); 12] = [
        ("correspondence matches exhaustive oracle", correspondence_oracle),
        ("self-correspondence is exact", self_correspondence),
        ("flip equivariance", flip_equivariance),
        ("end-to-end synthetic fixtures", end_to_end_fixtures),
        ("metric oracles", metric_oracles),
        ("report NED thresholds", report_thresholds),
        ("percentile mask", percentile_mask),
        ("k-means", kmeans),
        ("multiple correlation", correlation),
        ("log-binning", log_binning),
        ("DFG1 round trip and sample aggregation", dfg1_and_aggregation),
        ("model registry layers", registry_layers),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    let total = started.elapsed();
    if total < Duration::from_secs(300) {
        println!("PASS primary suite under 5 minutes: {:.2}s", total.as_secs_f64());
    } else {
        failed += 1;
        println!("FAIL primary suite under 5 minutes: {:.2}s", total.as_secs_f64());
    }
    println!("acceptance: {} criteria, {failed} failed", checks.len() + 1);
    if failed > 0 {
        std::process::exit(1);
    }
}
