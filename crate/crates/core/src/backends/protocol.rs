//! Wire messages shared by every model seat.
//!
//! A request is `{"seat", "request_id", "seed", "payload"}` and the payload
//! shape is selected by the seat. Images travel as base64-encoded PNG.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::schema::{MovementType, Pose, TransitionMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seat {
    T2i,
    I2i,
    I2v,
    Flf2v,
    Llm,
    Vlm,
    T2v,
}

impl Seat {
    pub const ALL: [Seat; 7] = [Seat::T2i, Seat::I2i, Seat::I2v, Seat::Flf2v, Seat::Llm, Seat::Vlm, Seat::T2v];

    pub fn as_str(self) -> &'static str {
        match self {
            Seat::T2i => "t2i",
            Seat::I2i => "i2i",
            Seat::I2v => "i2v",
            Seat::Flf2v => "flf2v",
            Seat::Llm => "llm",
            Seat::Vlm => "vlm",
            Seat::T2v => "t2v",
        }
    }

    pub fn parse(s: &str) -> Option<Seat> {
        Seat::ALL.into_iter().find(|seat| seat.as_str().eq_ignore_ascii_case(s))
    }

    pub fn path(self) -> String {
        format!("/v1/{}", self.as_str())
    }
}

impl fmt::Display for Seat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("invalid png: {0}")]
    Image(#[from] image::ImageError),
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encoding into memory");
    out.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, CodecError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

/// A PNG image carried as base64 text.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WireImage(pub String);

impl WireImage {
    pub fn from_image(img: &RgbImage) -> Self {
        WireImage(base64::engine::general_purpose::STANDARD.encode(encode_png(img)))
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>, CodecError> {
        Ok(base64::engine::general_purpose::STANDARD.decode(&self.0)?)
    }

    pub fn decode(&self) -> Result<RgbImage, CodecError> {
        decode_png(&self.png_bytes()?)
    }
}

impl fmt::Debug for WireImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WireImage({} b64 bytes)", self.0.len())
    }
}

/// Structured casting hint for compositing and animation seats. Real
/// adapters are free to ignore it and read the prompt instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CastMember {
    pub name: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauSummary {
    pub start: Vec<String>,
    pub end: Vec<String>,
    pub exiting: Vec<String>,
    pub entering: Vec<String>,
    pub movement: MovementType,
}

impl From<&TransitionMetadata> for TauSummary {
    fn from(tau: &TransitionMetadata) -> Self {
        TauSummary {
            start: tau.start_chars.iter().cloned().collect(),
            end: tau.end_chars.iter().cloned().collect(),
            exiting: tau.exiting.iter().cloned().collect(),
            entering: tau.entering.iter().cloned().collect(),
            movement: tau.movement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T2iPayload {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct I2iPayload {
    pub base_image: WireImage,
    pub reference_images: Vec<WireImage>,
    pub prompt: String,
    #[serde(default)]
    pub cast: Vec<CastMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct I2vPayload {
    pub keyframe: WireImage,
    pub prompt: String,
    pub frame_count: u32,
    pub fps: u32,
    #[serde(default)]
    pub cast: Vec<CastMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flf2vPayload {
    pub first_frame: WireImage,
    pub last_frame: WireImage,
    pub prompt: String,
    pub tau: TauSummary,
    pub frame_count: u32,
    pub fps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmPayload {
    pub stage: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmPayload {
    pub frames: Vec<WireImage>,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T2vPayload {
    pub prompt: String,
    pub negative_prompt: String,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestPayload {
    T2i(T2iPayload),
    I2i(I2iPayload),
    I2v(I2vPayload),
    Flf2v(Flf2vPayload),
    Llm(LlmPayload),
    Vlm(VlmPayload),
    T2v(T2vPayload),
}

impl RequestPayload {
    pub fn seat(&self) -> Seat {
        match self {
            RequestPayload::T2i(_) => Seat::T2i,
            RequestPayload::I2i(_) => Seat::I2i,
            RequestPayload::I2v(_) => Seat::I2v,
            RequestPayload::Flf2v(_) => Seat::Flf2v,
            RequestPayload::Llm(_) => Seat::Llm,
            RequestPayload::Vlm(_) => Seat::Vlm,
            RequestPayload::T2v(_) => Seat::T2v,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            RequestPayload::T2i(p) => serde_json::to_value(p),
            RequestPayload::I2i(p) => serde_json::to_value(p),
            RequestPayload::I2v(p) => serde_json::to_value(p),
            RequestPayload::Flf2v(p) => serde_json::to_value(p),
            RequestPayload::Llm(p) => serde_json::to_value(p),
            RequestPayload::Vlm(p) => serde_json::to_value(p),
            RequestPayload::T2v(p) => serde_json::to_value(p),
        };
        v.expect("payload serializes")
    }

    fn from_value(seat: Seat, v: Value) -> Result<Self, serde_json::Error> {
        Ok(match seat {
            Seat::T2i => RequestPayload::T2i(serde_json::from_value(v)?),
            Seat::I2i => RequestPayload::I2i(serde_json::from_value(v)?),
            Seat::I2v => RequestPayload::I2v(serde_json::from_value(v)?),
            Seat::Flf2v => RequestPayload::Flf2v(serde_json::from_value(v)?),
            Seat::Llm => RequestPayload::Llm(serde_json::from_value(v)?),
            Seat::Vlm => RequestPayload::Vlm(serde_json::from_value(v)?),
            Seat::T2v => RequestPayload::T2v(serde_json::from_value(v)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireRequest", into = "WireRequest")]
pub struct BackendRequest {
    pub request_id: String,
    pub seed: u64,
    pub payload: RequestPayload,
}

impl BackendRequest {
    pub fn new(request_id: impl Into<String>, seed: u64, payload: RequestPayload) -> Self {
        BackendRequest { request_id: request_id.into(), seed, payload }
    }

    pub fn seat(&self) -> Seat {
        self.payload.seat()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRequest {
    seat: Seat,
    request_id: String,
    seed: u64,
    payload: Value,
}

impl TryFrom<WireRequest> for BackendRequest {
    type Error = String;

    fn try_from(w: WireRequest) -> Result<Self, Self::Error> {
        let payload = RequestPayload::from_value(w.seat, w.payload)
            .map_err(|e| format!("payload does not match seat {}: {e}", w.seat.as_str()))?;
        Ok(BackendRequest { request_id: w.request_id, seed: w.seed, payload })
    }
}

impl From<BackendRequest> for WireRequest {
    fn from(r: BackendRequest) -> Self {
        WireRequest { seat: r.payload.seat(), request_id: r.request_id, seed: r.seed, payload: r.payload.to_value() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Retryable,
    Fatal,
}

/// Per-character visibility series reported by mock video seats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTrack {
    /// Fraction of the glyph inside the frame, one value per frame.
    pub visibility: Vec<f64>,
    /// Glyph centre in pixel coordinates, one value per frame.
    pub centroid: Vec<[f64; 2]>,
}

pub type VisibilityMap = BTreeMap<String, VisibilityTrack>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ResponsePayload {
    Image {
        image: WireImage,
    },
    Frames {
        frames: Vec<WireImage>,
        fps: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        visibility: Option<VisibilityMap>,
    },
    Text {
        text: String,
    },
    Counts {
        counts: Vec<u32>,
        caption: String,
    },
    Empty,
}

impl ResponsePayload {
    /// Whether this payload shape is what `seat` answers with.
    pub fn fits(&self, seat: Seat) -> bool {
        matches!(
            (seat, self),
            (Seat::T2i | Seat::I2i, ResponsePayload::Image { .. })
                | (Seat::I2v | Seat::Flf2v | Seat::T2v, ResponsePayload::Frames { .. })
                | (Seat::Llm, ResponsePayload::Text { .. })
                | (Seat::Vlm, ResponsePayload::Counts { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendResponse {
    pub request_id: String,
    pub status: Status,
    pub payload: ResponsePayload,
    #[serde(default)]
    pub timing_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl BackendResponse {
    pub fn ok(request_id: &str, payload: ResponsePayload) -> Self {
        BackendResponse { request_id: request_id.to_string(), status: Status::Ok, payload, timing_ms: 0, message: None }
    }

    pub fn failure(request_id: &str, status: Status, message: impl Into<String>) -> Self {
        BackendResponse {
            request_id: request_id.to_string(),
            status,
            payload: ResponsePayload::Empty,
            timing_ms: 0,
            message: Some(message.into()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

/// Body of `GET /v1/health`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub service: String,
    pub seats: Vec<Seat>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let req = BackendRequest::new(
            "t2i-0001",
            7,
            RequestPayload::T2i(T2iPayload { prompt: "Castle".into(), width: 4, height: 2 }),
        );
        let v: Value = serde_json::from_str(&req.to_json()).unwrap();
        assert_eq!(v["seat"], "t2i");
        assert_eq!(v["payload"]["prompt"], "Castle");
        let back: BackendRequest = serde_json::from_value(v).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn payload_must_match_seat() {
        let doc = r#"{"seat":"i2v","request_id":"x","seed":1,"payload":{"prompt":"p","width":1,"height":1}}"#;
        let err = serde_json::from_str::<BackendRequest>(doc).unwrap_err();
        assert!(err.to_string().contains("payload does not match seat i2v"), "{err}");
    }

    #[test]
    fn image_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 60, 7]));
        let wire = WireImage::from_image(&img);
        assert_eq!(wire.decode().unwrap(), img);
    }

    #[test]
    fn response_kind_fits_seat() {
        let text = ResponsePayload::Text { text: "{}".into() };
        assert!(text.fits(Seat::Llm));
        assert!(!text.fits(Seat::Vlm));
        assert!(!ResponsePayload::Empty.fits(Seat::T2i));
    }
}
