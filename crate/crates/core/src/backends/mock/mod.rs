//! Deterministic in-process implementations of every seat.

pub mod llm;
pub mod video;
pub mod world;

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use self::llm::LlmFault;
use self::video::{compose, first_last_to_video, image_to_video, text_to_video};
use self::world::{background, count_figures, MockWorld};
use super::protocol::{
    BackendRequest, BackendResponse, Health, RequestPayload, ResponsePayload, Seat, Status, WireImage,
};
use crate::util::stable_hash;

/// Failure fraction that leaves 39.8% of mock text-to-video clips clean.
pub const CALIBRATED_T2V_FAILURE: f64 = 0.602;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub world: MockWorld,
    /// Fraction of text-to-video clips that come out with a count defect.
    pub t2v_fail_fraction: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig { world: MockWorld::default(), t2v_fail_fraction: CALIBRATED_T2V_FAILURE }
    }
}

/// Key used to plant a counting answer for a particular frame list.
pub fn plant_key(frames: &[WireImage]) -> u64 {
    stable_hash(frames.iter().map(|f| f.0.as_bytes()))
}

/// Caption that accompanies counting answers.
pub fn count_caption(counts: &[u32]) -> String {
    let unit = |n: u32| if n == 1 { "figure" } else { "figures" };
    match counts {
        [] => "No frames were supplied.".to_string(),
        [only] => format!("The frame shows {only} {}.", unit(*only)),
        [first, .., last] => format!(
            "Frame 1 shows {first} {}; the final frame shows {last} {}.",
            unit(*first),
            unit(*last)
        ),
    }
}

/// Text before the first colon of a prompt, which keys mock backgrounds.
pub fn prompt_key(prompt: &str) -> &str {
    prompt.split(':').next().unwrap_or(prompt).trim()
}

#[derive(Default)]
struct MockState {
    faults: BTreeMap<LlmFault, u32>,
    fail_next: BTreeMap<Seat, u32>,
    plants: HashMap<u64, Vec<u32>>,
    requests: u64,
}

/// The mock service. Outputs are pure functions of `(seed, payload)`;
/// the only mutable state is test instrumentation (faults, plants).
pub struct MockService {
    config: MockConfig,
    state: Mutex<MockState>,
}

impl MockService {
    pub fn new(config: MockConfig) -> Self {
        MockService { config, state: Mutex::new(MockState::default()) }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Corrupt the next `times` replies of the fault's stage.
    pub fn arm_fault(&self, fault: LlmFault, times: u32) {
        *self.state.lock().expect("mock state").faults.entry(fault).or_insert(0) += times;
    }

    /// Answer the next `times` requests to `seat` with a retryable status.
    pub fn fail_next(&self, seat: Seat, times: u32) {
        *self.state.lock().expect("mock state").fail_next.entry(seat).or_insert(0) += times;
    }

    /// Make the counting seat report `counts` for exactly these frames.
    pub fn plant_counts(&self, frames: &[WireImage], counts: Vec<u32>) {
        self.state.lock().expect("mock state").plants.insert(plant_key(frames), counts);
    }

    pub fn request_count(&self) -> u64 {
        self.state.lock().expect("mock state").requests
    }

    pub fn health(&self) -> Health {
        Health { status: "ok".into(), service: "storyreel-mock".into(), seats: Seat::ALL.to_vec() }
    }

    fn take_fault(&self, stage: &str) -> Option<LlmFault> {
        let mut state = self.state.lock().expect("mock state");
        let fault = state
            .faults
            .iter()
            .find(|(f, n)| **n > 0 && f.stage().is_none_or(|s| s == stage))
            .map(|(f, _)| *f)?;
        *state.faults.get_mut(&fault).expect("present") -= 1;
        Some(fault)
    }

    fn take_failure(&self, seat: Seat) -> bool {
        let mut state = self.state.lock().expect("mock state");
        state.requests += 1;
        match state.fail_next.get_mut(&seat) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }

    /// Handle a raw JSON body. Returns an HTTP-style status with the body.
    pub fn handle_json(&self, seat_path: Option<Seat>, body: &str) -> (u16, String) {
        let request: BackendRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(body)
                    .ok()
                    .and_then(|v| v.get("request_id")?.as_str().map(String::from))
                    .unwrap_or_default();
                return (400, BackendResponse::failure(&id, Status::Fatal, format!("malformed request: {e}")).to_json());
            }
        };
        if let Some(seat) = seat_path {
            if seat != request.seat() {
                let msg = format!("{} request posted to {}", request.seat(), seat.path());
                return (400, BackendResponse::failure(&request.request_id, Status::Fatal, msg).to_json());
            }
        }
        (200, self.handle(&request).to_json())
    }

    pub fn handle(&self, request: &BackendRequest) -> BackendResponse {
        let started = Instant::now();
        let id = request.request_id.as_str();
        if self.take_failure(request.seat()) {
            return BackendResponse::failure(id, Status::Retryable, "mock seat busy (injected)");
        }
        let world = MockWorld { seed: request.seed, ..self.config.world };
        let result: Result<ResponsePayload, (Status, String)> = match &request.payload {
            RequestPayload::T2i(p) => {
                Ok(ResponsePayload::Image { image: WireImage::from_image(&background(prompt_key(&p.prompt), request.seed, p.width, p.height)) })
            }
            RequestPayload::I2i(p) => decode(&p.base_image).map(|base| ResponsePayload::Image {
                image: WireImage::from_image(&compose(&world, &base, &p.cast)),
            }),
            RequestPayload::I2v(p) => decode(&p.keyframe).and_then(|key| {
                image_to_video(&world, &key, &p.cast, p.frame_count)
                    .map(|(frames, vis)| frames_payload(frames, p.fps, Some(vis)))
                    .map_err(|e| (Status::Fatal, e.to_string()))
            }),
            RequestPayload::Flf2v(p) => decode(&p.first_frame).and_then(|first| {
                let last = decode(&p.last_frame)?;
                first_last_to_video(&world, &first, &last, &p.tau, p.frame_count)
                    .map(|(frames, vis)| frames_payload(frames, p.fps, Some(vis)))
                    .map_err(|e| (Status::Fatal, e.to_string()))
            }),
            RequestPayload::T2v(p) => text_to_video(
                &world,
                &p.prompt,
                request.seed,
                p.width,
                p.height,
                p.frame_count,
                self.config.t2v_fail_fraction,
            )
            .map(|(frames, _)| frames_payload(frames, p.fps, None))
            .map_err(|e| (Status::Fatal, e.to_string())),
            RequestPayload::Llm(p) => {
                let fault = self.take_fault(&p.stage);
                llm::respond(&p.stage, &p.prompt, request.seed, fault)
                    .map(|text| ResponsePayload::Text { text })
                    .map_err(|e| (Status::Fatal, e))
            }
            RequestPayload::Vlm(p) => self.count(&p.frames),
        };
        let mut response = match result {
            Ok(payload) => BackendResponse::ok(id, payload),
            Err((status, message)) => BackendResponse::failure(id, status, message),
        };
        response.timing_ms = started.elapsed().as_millis() as u64;
        response
    }

    fn count(&self, frames: &[WireImage]) -> Result<ResponsePayload, (Status, String)> {
        let planted = self.state.lock().expect("mock state").plants.get(&plant_key(frames)).cloned();
        let counts = match planted {
            Some(c) => c,
            None => frames.iter().map(|f| decode(f).map(|img| count_figures(&img))).collect::<Result<_, _>>()?,
        };
        let caption = count_caption(&counts);
        Ok(ResponsePayload::Counts { counts, caption })
    }
}

fn decode(img: &WireImage) -> Result<image::RgbImage, (Status, String)> {
    img.decode().map_err(|e| (Status::Fatal, e.to_string()))
}

fn frames_payload(
    frames: Vec<image::RgbImage>,
    fps: u32,
    visibility: Option<super::protocol::VisibilityMap>,
) -> ResponsePayload {
    ResponsePayload::Frames { frames: frames.iter().map(WireImage::from_image).collect(), fps, visibility }
}
