//! Synthetic fixtures and brute-force oracles shared by the integration tests.
//! Oracles here deliberately avoid the library's kernels.
#![allow(dead_code)]

pub mod http;

use std::path::Path;

use corrseg::correspondence::{Match, SIMILARITY_SNAP};
use corrseg::model::io::{encode_gray8_png, write_bytes};
use corrseg::model::{FeatureGrid, LabelMap, Mask, PixelFeatureMap, Point, PromptSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> PixelFeatureMap {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    PixelFeatureMap::new(h, w, c, data).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureGrid {
    // f32-representable values so DFG1 files hold them exactly
    let data = (0..h * w * c)
        .map(|_| f64::from(rng.random_range(-1.0f32..1.0)))
        .collect();
    FeatureGrid::with_uniform_stride(h, w, c, 1, (h, w), data).unwrap()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Cosine computed as the engine defines it: each vector scaled to unit
/// length, then a sequential dot product snapped onto [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    let mut dot = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    if dot >= 1.0 - SIMILARITY_SNAP {
        1.0
    } else if dot <= -1.0 + SIMILARITY_SNAP {
        -1.0
    } else {
        dot
    }
}

/// Exhaustive double loop: first (row-major) pixel with the largest cosine.
pub fn brute_force_argmax(template: &PixelFeatureMap, p: Point, target: &PixelFeatureMap) -> (Point, f64) {
    let q = template.pixel(p.row, p.col);
    let mut best = (Point::new(0, 0), f64::NEG_INFINITY);
    for r in 0..target.height() {
        for c in 0..target.width() {
            let s = cosine(q, target.pixel(r, c));
            if s > best.1 {
                best = (Point::new(r, c), s);
            }
        }
    }
    best
}

pub fn random_prompts(rng: &mut ChaCha8Rng, h: usize, w: usize, n_pos: usize, n_neg: usize) -> PromptSet {
    let mut pick = |n: usize| {
        let mut pts: Vec<Point> = Vec::new();
        while pts.len() < n {
            let p = Point::new(rng.random_range(0..h), rng.random_range(0..w));
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        pts
    };
    let positive = pick(n_pos);
    let negative = pick(n_neg);
    PromptSet::new(positive, negative)
}

pub fn brute_dice(a: &Mask, b: &Mask) -> f64 {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for r in 0..a.height() {
        for c in 0..a.width() {
            if a.get(r, c) {
                na += 1;
            }
            if b.get(r, c) {
                nb += 1;
            }
            if a.get(r, c) && b.get(r, c) {
                inter += 1;
            }
        }
    }
    if na + nb == 0 {
        1.0
    } else {
        (2 * inter) as f64 / (na + nb) as f64
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(density))
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand(a: &[u32], b: &[u32]) -> f64 {
    use std::collections::HashMap;
    let choose2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    let mut ra: HashMap<u32, u64> = HashMap::new();
    let mut rb: HashMap<u32, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Label image with `regions` axis-aligned blocks over a background of 0.
/// Region 1 is the structure of interest.
pub fn block_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, regions: u32) -> LabelMap {
    let mut labels = vec![0u32; h * w];
    let band = w / regions as usize;
    for k in 1..=regions {
        let c0 = (k as usize - 1) * band + rng.random_range(0..band / 4 + 1);
        let c1 = (k as usize * band).min(w) - rng.random_range(0..band / 4 + 1);
        let r0 = rng.random_range(1..h / 4 + 1); // row 0 stays background
        let r1 = h - rng.random_range(0..h / 4);
        for r in r0..r1 {
            for c in c0..c1 {
                labels[r * w + c] = k;
            }
        }
    }
    LabelMap::new(h, w, labels).unwrap()
}

/// Unit signature per label; labels index rows of a random orthonormal-ish set.
pub fn signatures(rng: &mut ChaCha8Rng, count: u32, channels: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..channels).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
            v
        })
        .collect()
}

/// Stride-1 grid whose every pixel carries its label's signature.
pub fn signature_grid(labels: &LabelMap, sigs: &[Vec<f64>]) -> FeatureGrid {
    let c = sigs[0].len();
    let mut data = Vec::with_capacity(labels.labels().len() * c);
    for &l in labels.labels() {
        data.extend_from_slice(&sigs[l as usize]);
    }
    FeatureGrid::with_uniform_stride(labels.height(), labels.width(), c, 1, labels.dims(), data).unwrap()
}

pub fn label_png(labels: &LabelMap) -> Vec<u8> {
    let codes: Vec<u8> = labels.labels().iter().map(|&l| l as u8).collect();
    encode_gray8_png(labels.height(), labels.width(), &codes).unwrap()
}

/// Grayscale rendering of a label map (intensity depends on the label).
pub fn label_image_png(labels: &LabelMap) -> Vec<u8> {
    let codes: Vec<u8> = labels
        .labels()
        .iter()
        .map(|&l| (40 + 50 * l).min(255) as u8)
        .collect();
    encode_gray8_png(labels.height(), labels.width(), &codes).unwrap()
}

pub fn write(path: impl AsRef<Path>, bytes: &[u8]) {
    write_bytes(path, bytes).unwrap();
}

pub fn match_at(target: Point, polarity: corrseg::model::Polarity) -> Match {
    Match {
        source: Point::new(0, 0),
        target,
        similarity: 1.0,
        polarity,
        label: None,
    }
}

pub struct SegFixture {
    pub manifest: std::path::PathBuf,
    pub template_labels: LabelMap,
    pub prompts: PromptSet,
    pub target_labels: Vec<LabelMap>,
}

/// Segmentation task whose regions carry unique feature signatures, scored
/// with the label-image oracle predictor.
pub fn write_segmentation_task(dir: &Path, seed: u64, n_targets: usize, model: &str) -> SegFixture {
    let mut rng = rng(seed);
    let (h, w, regions, channels) = (24, 24, 3u32, 8);
    let sigs = signatures(&mut rng, regions + 1, channels);
    let template_labels = block_labels(&mut rng, h, w, regions);

    let pick_in = |rng: &mut ChaCha8Rng, labels: &LabelMap, label: u32, taken: &mut Vec<Point>| loop {
        let p = Point::new(rng.random_range(0..h), rng.random_range(0..w));
        if labels.get(p.row, p.col) == label && !taken.contains(&p) {
            taken.push(p);
            return p;
        }
    };
    let mut taken = Vec::new();
    let positive: Vec<Point> = (0..3)
        .map(|_| pick_in(&mut rng, &template_labels, 1, &mut taken))
        .collect();
    let negative: Vec<Point> = [0, 2, 3]
        .iter()
        .map(|&l| pick_in(&mut rng, &template_labels, l, &mut taken))
        .collect();
    let prompts = PromptSet::new(positive, negative);

    let feat_dir = dir.join("features").join(model);
    write(dir.join("template.png"), &label_image_png(&template_labels));
    write(dir.join("template.json"), &serde_json::to_vec(&prompts).unwrap());
    write(
        feat_dir.join("template.dfg1"),
        &signature_grid(&template_labels, &sigs).to_dfg1_bytes(),
    );
    let mut targets = Vec::new();
    let mut gts = Vec::new();
    let mut label_maps = Vec::new();
    let mut target_labels = Vec::new();
    for i in 0..n_targets {
        let labels = block_labels(&mut rng, h, w, regions);
        let name = format!("target_{i}");
        write(dir.join(format!("{name}.png")), &label_image_png(&labels));
        let gt = labels.region(1);
        write(
            dir.join(format!("{name}_mask.png")),
            &corrseg::model::io::encode_mask_png(&gt).unwrap(),
        );
        write(dir.join(format!("{name}_labels.png")), &label_png(&labels));
        write(
            feat_dir.join(format!("{name}.dfg1")),
            &signature_grid(&labels, &sigs).to_dfg1_bytes(),
        );
        targets.push(format!("{name}.png"));
        gts.push(format!("{name}_mask.png"));
        label_maps.push(format!("{name}_labels.png"));
        target_labels.push(labels);
    }
    let manifest = serde_json::json!({
        "task_id": "synthetic-seg",
        "kind": "segmentation",
        "template": {"image": "template.png", "prompts": "template.json"},
        "targets": targets,
        "ground_truth": gts,
        "models": [model],
        "predictor": {"kind": "oracle", "label_maps": label_maps},
        "provider": {"kind": "file", "root": "features"},
        "output_dir": "out",
    });
    let path = dir.join("manifest.json");
    write(&path, &serde_json::to_vec_pretty(&manifest).unwrap());
    SegFixture {
        manifest: path,
        template_labels,
        prompts,
        target_labels,
    }
}

/// Localization task with unique per-pixel features. Target 0 is the template
/// itself; target 1 is the template rolled right by 3 columns.
pub fn write_localization_task(dir: &Path, seed: u64, model: &str) -> std::path::PathBuf {
    let mut rng = rng(seed);
    let (h, w, c) = (20, 20, 6);
    let grid = random_grid(&mut rng, h, w, c);
    let prompts = random_prompts(&mut rng, h, w, 4, 0);
    let image: Vec<u8> = (0..h * w).map(|i| (i % 251) as u8).collect();

    let shift = 3;
    let mut rolled = vec![0.0; h * w * c];
    let mut rolled_img = vec![0u8; h * w];
    for r in 0..h {
        for col in 0..w {
            let dst = r * w + (col + shift) % w;
            rolled[dst * c..(dst + 1) * c].copy_from_slice(grid.cell(r, col));
            rolled_img[dst] = image[r * w + col];
        }
    }
    let rolled_grid = FeatureGrid::with_uniform_stride(h, w, c, 1, (h, w), rolled).unwrap();
    let rolled_landmarks: Vec<Point> = prompts
        .positive
        .iter()
        .map(|p| Point::new(p.row, (p.col + shift) % w))
        .collect();

    let feat_dir = dir.join("features").join(model);
    write(dir.join("template.png"), &encode_gray8_png(h, w, &image).unwrap());
    write(dir.join("template.json"), &serde_json::to_vec(&prompts).unwrap());
    write(feat_dir.join("template.dfg1"), &grid.to_dfg1_bytes());
    write(dir.join("self_landmarks.json"), &serde_json::to_vec(&prompts.positive).unwrap());
    write(dir.join("rolled.png"), &encode_gray8_png(h, w, &rolled_img).unwrap());
    write(feat_dir.join("rolled.dfg1"), &rolled_grid.to_dfg1_bytes());
    write(
        dir.join("rolled_landmarks.json"),
        &serde_json::to_vec(&serde_json::json!({"positive": rolled_landmarks})).unwrap(),
    );
    let manifest = serde_json::json!({
        "task_id": "synthetic-loc",
        "kind": "localization",
        "template": {"image": "template.png", "prompts": "template.json"},
        "targets": ["template.png", "rolled.png"],
        "ground_truth": ["self_landmarks.json", "rolled_landmarks.json"],
        "models": [model],
        "provider": {"kind": "file", "root": "features"},
        "output_dir": "out",
    });
    let path = dir.join("manifest.json");
    write(&path, &serde_json::to_vec_pretty(&manifest).unwrap());
    path
}
