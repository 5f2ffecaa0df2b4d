mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use common::http::{serve, Reply};
use common::*;
use corrseg::backends::{
    registry, registry_lookup, EmbeddingKind, ExternalConfig, ExternalProvider, FeatureProvider, FeatureRequest,
    FileProvider, HttpMaskPredictor, MaskRequest,
};
use corrseg::model::io::encode_mask_png;
use corrseg::model::{FeatureGrid, Image2D, Mask, Point};
use corrseg::segmentation::MaskPredictor;
use corrseg::Error;

fn blank(id: &str, h: usize, w: usize) -> Image2D {
    Image2D::new(id, h, w, vec![0.25; h * w]).unwrap()
}

#[test]
fn registry_layers_and_kinds() {
    for id in ["d1s8", "d1s16", "d1b8", "d1b16", "d2s14", "d2b14"] {
        assert_eq!(registry_lookup(id).unwrap().embedding_layer, Some(11), "{id}");
    }
    assert_eq!(registry_lookup("d2l14").unwrap().embedding_layer, Some(23));
    assert_eq!(registry_lookup("d2g14").unwrap().embedding_layer, Some(39));
    assert_eq!(registry_lookup("sd").unwrap().embedding_kind, EmbeddingKind::DiffusionIntermediate);
    assert_eq!(registry_lookup("sam").unwrap().embedding_kind, EmbeddingKind::EncoderOutput);
    assert!(registry_lookup("clip").unwrap().visualization_only);
    assert_eq!(registry().len(), 11);
    assert!(matches!(registry_lookup("vit-huge"), Err(Error::UnknownModel(_))));
}

#[test]
fn file_provider_reads_single_and_averaged_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(1);
    let model = registry_lookup("d2s14").unwrap();
    let single = random_grid(&mut rng, 6, 5, 4);
    write(dir.path().join("d2s14/a.dfg1"), &single.to_dfg1_bytes());
    let samples: Vec<FeatureGrid> = (0..3).map(|_| random_grid(&mut rng, 6, 5, 4)).collect();
    for (k, g) in samples.iter().enumerate() {
        write(dir.path().join(format!("d2s14/b.s{k}.dfg1")), &g.to_dfg1_bytes());
    }
    let provider = FileProvider::new(dir.path());
    assert_eq!(*provider.features_for(&blank("a", 6, 5), model).unwrap(), single);

    let avg = provider.features_for(&blank("b", 6, 5), model).unwrap();
    for i in 0..avg.data().len() {
        let mean = samples.iter().map(|g| g.data()[i]).sum::<f64>() / 3.0;
        assert!((avg.data()[i] - mean).abs() < 1e-12);
    }
}

#[test]
fn file_provider_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(2);
    let model = registry_lookup("d1s8").unwrap();
    let provider = FileProvider::new(dir.path());
    let err = provider.features_for(&blank("a", 6, 5), model).unwrap_err();
    assert!(matches!(err, Error::NoFeatures { .. }));
    assert!(err.is_missing_input());

    write(dir.path().join("d1s8/a.dfg1"), &random_grid(&mut rng, 6, 5, 4).to_dfg1_bytes());
    let err = provider.features_for(&blank("b", 6, 5), model).unwrap_err();
    assert!(matches!(err, Error::NoFeatures { .. }));
    let err = provider.features_for(&blank("a", 7, 5), model).unwrap_err();
    assert!(matches!(err, Error::Geometry(_)));

    write(dir.path().join("d1s8/bad.dfg1"), b"NOPE and more bytes than the header needs....");
    assert!(provider.features_for(&blank("bad", 6, 5), model).is_err());
}

fn mock_grid(h: usize, w: usize, stride: u32, channels: usize) -> FeatureGrid {
    let rows = (h - 1) / stride as usize + 1;
    let cols = (w - 1) / stride as usize + 1;
    let data = (0..rows * cols * channels).map(|i| (i % 17) as f64 * 0.25).collect();
    FeatureGrid::with_uniform_stride(rows, cols, channels, stride, (h, w), data).unwrap()
}

#[test]
fn external_provider_sends_registry_fields_and_caches() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen: Arc<Mutex<Vec<FeatureRequest>>> = Arc::default();
    let url = {
        let calls = calls.clone();
        let seen = seen.clone();
        serve(move |req| {
            assert_eq!((req.method.as_str(), req.path.as_str()), ("POST", "/features"));
            calls.fetch_add(1, Ordering::SeqCst);
            let parsed: FeatureRequest = serde_json::from_slice(&req.body).unwrap();
            let stride = parsed.stride;
            seen.lock().unwrap().push(parsed);
            Reply::ok("application/octet-stream", mock_grid(8, 8, stride, 8).to_dfg1_bytes())
        })
    };
    let mut config = ExternalConfig::new(&url);
    config.expected_channels = Some(8);
    let provider = ExternalProvider::new(config);
    let model = registry_lookup("d2l14").unwrap();
    let image = blank("img", 8, 8);
    let a = provider.features_for(&image, model).unwrap();
    let b = provider.features_for(&image, model).unwrap();
    assert_eq!(a, b);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.model, "d2l14");
    assert_eq!(req.layer, 23);
    assert_eq!(req.stride, 7);
    assert_eq!(req.samples, 1);
    assert!(!BASE64.decode(&req.image_png_base64).unwrap().is_empty());

    // diffusion: no token layer, several samples
    provider.features_for(&image, registry_lookup("sd").unwrap()).unwrap();
    let req = seen.lock().unwrap()[1].clone();
    assert_eq!((req.layer, req.samples), (-1, 8));
    assert!(provider.fetches_pixels());
}

#[test]
fn external_provider_rejects_bad_responses() {
    let url = serve(|req| match req.path.as_str() {
        _ if req.body.is_empty() => Reply::status(400),
        _ => {
            let parsed: FeatureRequest = serde_json::from_slice(&req.body).unwrap();
            match parsed.model.as_str() {
                "d1s8" => Reply::status(500),
                "d1s16" => Reply::ok("application/octet-stream", b"garbage".to_vec()),
                "d1b8" => Reply::ok("application/octet-stream", mock_grid(8, 8, parsed.stride, 3).to_dfg1_bytes()),
                "d1b16" => Reply::ok("application/octet-stream", mock_grid(9, 8, parsed.stride, 8).to_dfg1_bytes()),
                _ => Reply::ok("application/octet-stream", mock_grid(8, 8, parsed.stride + 1, 8).to_dfg1_bytes()),
            }
        }
    });
    let mut config = ExternalConfig::new(&url);
    config.expected_channels = Some(8);
    let provider = ExternalProvider::new(config);
    let image = blank("x", 8, 8);
    let get = |id: &str| provider.features_for(&image, registry_lookup(id).unwrap()).unwrap_err();
    assert!(matches!(get("d1s8"), Error::Endpoint(_)));
    assert!(matches!(get("d1s16"), Error::MalformedResponse(_)));
    assert!(matches!(get("d1b8"), Error::ChannelMismatch { expected: 8, found: 3 }));
    assert!(matches!(get("d1b16"), Error::Geometry(_)));
    assert!(matches!(get("d2s14"), Error::Geometry(_)));

    let dead = ExternalProvider::new(ExternalConfig::new("http://127.0.0.1:9"));
    assert!(matches!(
        dead.features_for(&image, registry_lookup("d1s8").unwrap()),
        Err(Error::Endpoint(_))
    ));
}

#[test]
fn external_provider_bounds_in_flight_requests() {
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let url = {
        let (active, peak) = (active.clone(), peak.clone());
        serve(move |req| {
            let now = active.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(40));
            active.fetch_sub(1, Ordering::SeqCst);
            let parsed: FeatureRequest = serde_json::from_slice(&req.body).unwrap();
            Reply::ok("application/octet-stream", mock_grid(8, 8, parsed.stride, 8).to_dfg1_bytes())
        })
    };
    let mut config = ExternalConfig::new(&url);
    config.expected_channels = Some(8);
    config.max_in_flight = 2;
    let provider = Arc::new(ExternalProvider::new(config));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let provider = provider.clone();
            std::thread::spawn(move || {
                provider
                    .features_for(&blank(&format!("im{i}"), 8, 8), registry_lookup("d1s8").unwrap())
                    .unwrap();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert!(peak.load(Ordering::SeqCst) <= 2);
    assert!(peak.load(Ordering::SeqCst) >= 1);
}

#[test]
fn http_mask_predictor_round_trip() {
    let url = serve(|req| {
        assert_eq!(req.path, "/predict_mask");
        let parsed: MaskRequest = serde_json::from_slice(&req.body).unwrap();
        assert_eq!(parsed.positive, vec![Point::new(1, 1)]);
        let mask = Mask::from_fn(4, 4, |r, _| r < 2);
        let body = serde_json::json!({"candidates": [
            {"mask_png_base64": BASE64.encode(encode_mask_png(&mask).unwrap()), "score": 0.75},
            {"mask_png_base64": BASE64.encode(encode_mask_png(&Mask::empty(4, 4)).unwrap()), "score": 0.1},
        ]});
        Reply::ok("application/json", serde_json::to_vec(&body).unwrap())
    });
    let predictor = HttpMaskPredictor::new(&url);
    assert!(!predictor.concurrent_safe());
    let cands = predictor
        .predict(&blank("m", 4, 4), &[Point::new(1, 1)], &[Point::new(3, 3)])
        .unwrap();
    assert_eq!(cands.len(), 2);
    assert_eq!(cands[0].score, 0.75);
    assert_eq!(cands[0].mask.count(), 8);

    let broken = serve(|_| Reply::ok("application/json", b"{\"candidates\": 3}".to_vec()));
    let err = HttpMaskPredictor::new(&broken)
        .predict(&blank("m", 4, 4), &[Point::new(1, 1)], &[])
        .unwrap_err();
    assert!(matches!(err, Error::MalformedResponse(_)));
}
