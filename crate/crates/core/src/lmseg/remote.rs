//! HTTP clients for remote grounding and mask services.
//!
//! `POST {ground_url}/v1/ground` with `{"image_b64", "query"}` answers
//! `{"bbox": [x1,y1,x2,y2], "category", "rationale"}`;
//! `POST {mask_url}/v1/mask` with `{"image_b64", "bbox"}` answers
//! `{"rle": {"size": [H,W], "counts": [...]}}`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{decode_rle, BBox, GroundingBackend, GroundingResponse, Rle, ViewContext};
use crate::error::{Error, Result};
use crate::imageio::encode_rgb_png;
use crate::scene::Mask2D;

pub const DEFAULT_PROMPT: &str = "Find the single object described by the request below. \
Reply with strict JSON only, using exactly the keys \"bbox\" ([x1, y1, x2, y2] in pixels), \
\"category\" (short noun) and \"rationale\" (one sentence). Request: {query}";

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub ground_url: String,
    pub mask_url: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Total attempts per request, first try included.
    pub attempts: u32,
    /// Prompt template; `{query}` is replaced by the user query.
    pub prompt: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            ground_url: "http://127.0.0.1:8080".into(),
            mask_url: None,
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            attempts: 3,
            prompt: DEFAULT_PROMPT.into(),
        }
    }
}

#[derive(Serialize)]
struct GroundRequest<'a> {
    image_b64: &'a str,
    query: &'a str,
}

#[derive(Deserialize)]
struct GroundReply {
    bbox: [f64; 4],
    category: String,
    rationale: String,
}

#[derive(Serialize)]
struct MaskRequest<'a> {
    image_b64: &'a str,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct MaskReply {
    rle: Rle,
}

/// Grounding and mask services reached over HTTP.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.attempts == 0 {
            return Err(Error::Config("remote attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self { client, config })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &str, body: &B) -> Result<R> {
        let mut last = String::new();
        for attempt in 1..=self.config.attempts {
            match self.client.post(url).json(body).send() {
                Ok(resp) if resp.status().is_success() => match resp.text() {
                    Ok(text) => match serde_json::from_str::<R>(&text) {
                        Ok(r) => return Ok(r),
                        Err(e) => last = format!("malformed reply: {e}"),
                    },
                    Err(e) => last = format!("reading reply: {e}"),
                },
                Ok(resp) => last = format!("HTTP {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
            log::warn!("{url}: attempt {attempt}/{} failed: {last}", self.config.attempts);
        }
        Err(Error::Backend {
            attempts: self.config.attempts,
            message: format!("{url}: {last}"),
        })
    }

    fn encode(view: &ViewContext<'_>) -> Result<String> {
        Ok(base64::engine::general_purpose::STANDARD.encode(encode_rgb_png(view.image)?))
    }

    fn request_ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse> {
        let image_b64 = Self::encode(view)?;
        let prompt = self.config.prompt.replace("{query}", query);
        let url = format!("{}/v1/ground", self.config.ground_url.trim_end_matches('/'));
        let reply: GroundReply = self.post(
            &url,
            &GroundRequest {
                image_b64: &image_b64,
                query: &prompt,
            },
        )?;
        let [x1, y1, x2, y2] = reply.bbox;
        Ok(GroundingResponse {
            bbox: BBox::new(x1, y1, x2, y2),
            category: reply.category,
            rationale: reply.rationale,
        })
    }
}

impl GroundingBackend for RemoteBackend {
    fn ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse> {
        self.request_ground(view, query)
    }

    fn mask(&self, view: &ViewContext<'_>, bbox: &BBox) -> Result<Mask2D> {
        let base = self
            .config
            .mask_url
            .as_deref()
            .ok_or_else(|| Error::Config("remote backend needs a mask service URL".into()))?;
        let image_b64 = Self::encode(view)?;
        let url = format!("{}/v1/mask", base.trim_end_matches('/'));
        let reply: MaskReply = self.post(
            &url,
            &MaskRequest {
                image_b64: &image_b64,
                bbox: bbox.as_array(),
            },
        )?;
        if reply.rle.size != [view.image.height, view.image.width] {
            return Err(Error::Backend {
                attempts: 1,
                message: format!(
                    "mask size {:?} does not match image {}x{}",
                    reply.rle.size, view.image.width, view.image.height
                ),
            });
        }
        decode_rle(&reply.rle)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

/// Remote grounding without a mask service: the mask is the filled box.
pub struct BboxFillBackend {
    remote: RemoteBackend,
}

impl BboxFillBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        Ok(Self {
            remote: RemoteBackend::new(config)?,
        })
    }
}

impl GroundingBackend for BboxFillBackend {
    fn ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse> {
        self.remote.request_ground(view, query)
    }

    fn mask(&self, view: &ViewContext<'_>, bbox: &BBox) -> Result<Mask2D> {
        Ok(bbox.fill(view.image.width, view.image.height))
    }

    fn max_in_flight(&self) -> usize {
        self.remote.max_in_flight()
    }
}
