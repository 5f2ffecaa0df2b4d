//! HTTP clients for out-of-process feature extraction and mask prediction.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{FeatureProvider, ModelSpec};
use crate::error::{Error, Result};
use crate::model::io::{decode_mask_png, encode_image_png};
use crate::model::{FeatureGrid, Image2D, Point};
use crate::segmentation::{MaskCandidate, MaskPredictor};

const MAX_RESPONSE_BYTES: u64 = 1 << 31;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn endpoint_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn transport_error(url: &str, e: ureq::Error) -> Error {
    match e {
        ureq::Error::StatusCode(code) => Error::Endpoint(format!("{url} returned HTTP {code}")),
        other => Error::Endpoint(format!("{url} unreachable: {other}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    /// Base URL, e.g. `http://127.0.0.1:8500`.
    pub endpoint: String,
    /// Overlapping-patch stride; defaults to half the model's patch size.
    #[serde(default)]
    pub stride: Option<u32>,
    /// Forward passes to average; defaults per model.
    #[serde(default)]
    pub samples: Option<u32>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Overrides the registry channel count checked on responses.
    #[serde(default)]
    pub expected_channels: Option<usize>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    300
}

impl ExternalConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            stride: None,
            samples: None,
            max_in_flight: default_in_flight(),
            expected_channels: None,
            timeout_secs: default_timeout(),
        }
    }
}

/// `POST /features` request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRequest {
    pub model: String,
    pub image_png_base64: String,
    pub stride: u32,
    /// Token layer, or -1 for the model's own output (encoder / diffusion).
    pub layer: i64,
    pub samples: u32,
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

type Slot = Arc<Mutex<Option<Arc<FeatureGrid>>>>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    model: String,
    image: String,
    pixels: u64,
    stride: u32,
}

/// Fetches grids from an inference host and caches each one after the first
/// successful response.
#[derive(Debug)]
pub struct ExternalProvider {
    config: ExternalConfig,
    agent: ureq::Agent,
    gate: Gate,
    cache: Mutex<HashMap<CacheKey, Slot>>,
}

impl ExternalProvider {
    pub fn new(config: ExternalConfig) -> Self {
        Self {
            agent: agent(Duration::from_secs(config.timeout_secs)),
            gate: Gate::new(config.max_in_flight),
            cache: Mutex::new(HashMap::new()),
            config,
        }
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    pub fn request_for(&self, image: &Image2D, model: &ModelSpec) -> Result<FeatureRequest> {
        Ok(FeatureRequest {
            model: model.id.to_owned(),
            image_png_base64: BASE64.encode(encode_image_png(image)?),
            stride: self.config.stride.unwrap_or_else(|| model.default_stride()),
            layer: model.embedding_layer.map_or(-1, i64::from),
            samples: self.config.samples.unwrap_or_else(|| model.default_samples()),
        })
    }

    fn fetch(&self, image: &Image2D, model: &ModelSpec, request: &FeatureRequest) -> Result<FeatureGrid> {
        let url = endpoint_url(&self.config.endpoint, "features");
        let bytes = {
            let _permit = self.gate.acquire();
            let mut response = self
                .agent
                .post(&url)
                .send_json(request)
                .map_err(|e| transport_error(&url, e))?;
            response
                .body_mut()
                .with_config()
                .limit(MAX_RESPONSE_BYTES)
                .read_to_vec()
                .map_err(|e| Error::MalformedResponse(format!("reading body from {url}: {e}")))?
        };
        let grid = FeatureGrid::from_dfg1_bytes(&bytes)
            .map_err(|e| Error::MalformedResponse(format!("{url}: {e}")))?;
        let expected = self.config.expected_channels.unwrap_or(model.channels);
        if grid.channels() != expected {
            return Err(Error::ChannelMismatch {
                expected,
                found: grid.channels(),
            });
        }
        if grid.source_dims() != image.dims() {
            return Err(Error::Geometry(format!(
                "response covers {:?}, image is {:?}",
                grid.source_dims(),
                image.dims()
            )));
        }
        if grid.stride() != (request.stride, request.stride) {
            return Err(Error::Geometry(format!(
                "requested stride {} but response records {:?}",
                request.stride,
                grid.stride()
            )));
        }
        Ok(grid)
    }
}

fn pixel_hash(image: &Image2D) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    image.dims().hash(&mut h);
    for v in image.pixels() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl FeatureProvider for ExternalProvider {
    fn features_for(&self, image: &Image2D, model: &ModelSpec) -> Result<Arc<FeatureGrid>> {
        let request = self.request_for(image, model)?;
        let key = CacheKey {
            model: model.id.to_owned(),
            image: image.id().to_owned(),
            pixels: pixel_hash(image),
            stride: request.stride,
        };
        let slot = self.cache.lock().unwrap().entry(key).or_default().clone();
        let mut slot = slot.lock().unwrap();
        if let Some(grid) = slot.as_ref() {
            return Ok(grid.clone());
        }
        let grid = Arc::new(self.fetch(image, model, &request)?);
        *slot = Some(grid.clone());
        Ok(grid)
    }

    fn fetches_pixels(&self) -> bool {
        true
    }
}

/// `POST /predict_mask` request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRequest {
    pub image_png_base64: String,
    pub positive: Vec<Point>,
    pub negative: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub mask_png_base64: String,
    pub score: f64,
}

impl MaskResponse {
    pub fn decode(&self) -> Result<Vec<MaskCandidate>> {
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let png = BASE64
                    .decode(&c.mask_png_base64)
                    .map_err(|e| Error::MalformedResponse(format!("candidate {i}: {e}")))?;
                let mask = decode_mask_png(&png)
                    .map_err(|e| Error::MalformedResponse(format!("candidate {i}: {e}")))?;
                Ok(MaskCandidate { mask, score: c.score })
            })
            .collect()
    }
}

/// Mask predictor hosted behind HTTP. Requests are sent one at a time.
#[derive(Debug)]
pub struct HttpMaskPredictor {
    endpoint: String,
    agent: ureq::Agent,
    serial: Mutex<()>,
}

impl HttpMaskPredictor {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: agent(Duration::from_secs(default_timeout())),
            serial: Mutex::new(()),
        }
    }
}

impl MaskPredictor for HttpMaskPredictor {
    fn predict(&self, image: &Image2D, positive: &[Point], negative: &[Point]) -> Result<Vec<MaskCandidate>> {
        let url = endpoint_url(&self.endpoint, "predict_mask");
        let request = MaskRequest {
            image_png_base64: BASE64.encode(encode_image_png(image)?),
            positive: positive.to_vec(),
            negative: negative.to_vec(),
        };
        let _serial = self.serial.lock().unwrap();
        let mut response = self
            .agent
            .post(&url)
            .send_json(&request)
            .map_err(|e| transport_error(&url, e))?;
        let body: MaskResponse = response
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_json()
            .map_err(|e| Error::MalformedResponse(format!("{url}: {e}")))?;
        body.decode()
    }

    fn concurrent_safe(&self) -> bool {
        false
    }
}
