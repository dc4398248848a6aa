use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::prompts;
use crate::backends::{BackendError, BackendHandle, BackendRequest, Backends, LlmPayload, RequestPayload, ResponsePayload, Seat};
use crate::schema::{ErrorCode, SchemaError, ValidationReport};
use crate::util::write_if_changed;

/// One LLM attempt, kept whether it succeeded or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub stage: String,
    pub call: String,
    pub attempt: u32,
    pub request: String,
    pub reply: String,
    pub parse_outcome: String,
    pub validation_codes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AgentTrace {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.json", self.stage, self.call, self.attempt)
    }
}

/// Collects traces in memory and optionally mirrors them to a directory.
#[derive(Debug, Clone, Default)]
pub struct TraceSink {
    dir: Option<PathBuf>,
    traces: Arc<Mutex<Vec<AgentTrace>>>,
}

impl TraceSink {
    pub fn memory() -> Self {
        TraceSink::default()
    }

    pub fn directory(dir: impl Into<PathBuf>) -> Self {
        TraceSink { dir: Some(dir.into()), traces: Arc::default() }
    }

    pub fn dir(&self) -> Option<&PathBuf> {
        self.dir.as_ref()
    }

    fn record(&self, trace: AgentTrace) -> std::io::Result<()> {
        if let Some(dir) = &self.dir {
            let body = serde_json::to_string_pretty(&trace).expect("trace serializes");
            write_if_changed(&dir.join(trace.file_name()), body.as_bytes())?;
        }
        self.traces.lock().expect("trace lock").push(trace);
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<AgentTrace> {
        self.traces.lock().expect("trace lock").clone()
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{stage} agent ({call}) gave up after {attempts} attempt(s): {}", codes(.report))]
    Exhausted { stage: String, call: String, attempts: u32, report: ValidationReport },
    #[error("{stage} agent ({call}): {source}")]
    Backend { stage: String, call: String, source: BackendError },
    #[error("cannot write agent trace: {0}")]
    Trace(#[from] std::io::Error),
}

impl AgentError {
    /// The last validation report, when the agent gave up on invalid replies.
    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            AgentError::Exhausted { report, .. } => Some(report),
            _ => None,
        }
    }
}

fn codes(report: &ValidationReport) -> String {
    let list: Vec<&str> = report.codes().into_iter().map(|c| c.as_str()).collect();
    list.join(", ")
}

/// Accepted value of a stage call, with an optional note for the trace.
pub struct Outcome<T> {
    pub value: T,
    pub note: Option<String>,
}

impl<T> Outcome<T> {
    pub fn accept(value: T) -> Self {
        Outcome { value, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Pull the JSON object out of a reply that may wrap it in prose or fences.
pub fn extract_json(reply: &str) -> Result<Value, String> {
    let (Some(open), Some(close)) = (reply.find('{'), reply.rfind('}')) else {
        return Err("reply contains no JSON object".into());
    };
    if close < open {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&reply[open..=close]).map_err(|e| format!("invalid JSON: {e}"))
}

fn feedback(report: &ValidationReport) -> String {
    let mut out = String::from("\nYOUR PREVIOUS REPLY WAS REJECTED. Fix every problem below and reply again:\n");
    for v in &report.errors {
        out.push_str(&format!("- {} at {}: {}\n", v.code, v.path, v.message));
    }
    out
}

/// Drives the LLM seat for one stage call with retries and tracing.
pub struct LlmCaller {
    llm: BackendHandle,
    sink: TraceSink,
    seed: u64,
    max_attempts: u32,
}

impl LlmCaller {
    pub fn new(backends: &Backends, sink: TraceSink, seed: u64, max_attempts: u32) -> Self {
        LlmCaller { llm: backends.handle(Seat::Llm).clone(), sink, seed, max_attempts: max_attempts.max(1) }
    }

    pub fn traces(&self) -> Vec<AgentTrace> {
        self.sink.snapshot()
    }

    pub fn ask<T>(
        &self,
        stage: &str,
        call: &str,
        vars: &[(&str, String)],
        input: &Value,
        mut check: impl FnMut(&Value, u32) -> Result<Outcome<T>, ValidationReport>,
    ) -> Result<T, AgentError> {
        let template = prompts::template(stage);
        let input_text = serde_json::to_string_pretty(input).expect("input serializes");
        let mut last = ValidationReport::default();
        for attempt in 1..=self.max_attempts {
            let mut all: Vec<(&str, String)> = vars.to_vec();
            all.push(("input", input_text.clone()));
            all.push(("feedback", if attempt == 1 { String::new() } else { feedback(&last) }));
            let prompt = prompts::render(template, &all);
            let request = BackendRequest::new(
                format!("llm-{stage}-{call}-a{attempt}"),
                self.seed,
                RequestPayload::Llm(LlmPayload { stage: stage.to_string(), prompt: prompt.clone() }),
            );
            let mut trace = AgentTrace {
                stage: stage.to_string(),
                call: call.to_string(),
                attempt,
                request: prompt,
                reply: String::new(),
                parse_outcome: String::new(),
                validation_codes: Vec::new(),
                note: None,
            };
            let reply = match self.llm.call(&request) {
                Ok(resp) => match resp.payload {
                    ResponsePayload::Text { text } => text,
                    _ => unreachable!("call_backend checks the payload kind"),
                },
                Err(source) => {
                    trace.parse_outcome = format!("backend error: {source}");
                    self.sink.record(trace)?;
                    return Err(AgentError::Backend { stage: stage.into(), call: call.into(), source });
                }
            };
            trace.reply = reply.clone();
            let result = match extract_json(&reply) {
                Ok(value) => {
                    trace.parse_outcome = "ok".into();
                    check(&value, attempt)
                }
                Err(message) => {
                    trace.parse_outcome = message.clone();
                    Err(ValidationReport::from_schema_errors(&[SchemaError {
                        path: "$".into(),
                        expected: "a JSON object".into(),
                        found: message,
                        code: ErrorCode::Schema,
                    }]))
                }
            };
            match result {
                Ok(outcome) => {
                    trace.note = outcome.note;
                    self.sink.record(trace)?;
                    return Ok(outcome.value);
                }
                Err(report) => {
                    trace.validation_codes = report.codes().iter().map(|c| c.as_str().to_string()).collect();
                    self.sink.record(trace)?;
                    last = report;
                }
            }
        }
        Err(AgentError::Exhausted { stage: stage.into(), call: call.into(), attempts: self.max_attempts, report: last })
    }
}
