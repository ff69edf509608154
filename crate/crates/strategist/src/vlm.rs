//! Three-stage prompting against a chat-completions endpoint, with replay.

use std::time::Duration;

use base64::Engine as _;
use forge_core::guidance::{
    format_issues, parse_plan, plan_to_string, validate_plan, GuidancePlan, GuidanceTemplate, PlanIssue, PlanLimits,
    TemplateKind, TemplateParams,
};
use forge_core::Scenario;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::behavior::{classify_sv_behavior, BehaviorThresholds};
use crate::describe::describe_scenario;
use crate::error::{Result, StrategistError};
use crate::knowledge::knowledge_table;
use crate::render::{rasterize, render_bev};
use crate::transcript::{now, CoTTranscript, Stage, StageRecord};

pub const SYSTEM_PROMPT: &str = include_str!("../prompts/system.md");
pub const UNDERSTANDING_PROMPT: &str = include_str!("../prompts/understanding.md");
pub const RISK_PROMPT: &str = include_str!("../prompts/risk.md");
pub const FORMULATION_PROMPT: &str = include_str!("../prompts/formulation.md");

/// Replaces `{{key}}` placeholders.
pub fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Part {
    Text(String),
    /// Base64 image with its MIME type.
    Image { mime: String, data: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: &str, text: impl Into<String>) -> Self {
        Self { role: role.into(), parts: vec![Part::Text(text.into())] }
    }
}

/// One request/response round trip.
#[derive(Clone, Debug, PartialEq)]
pub struct Exchange {
    pub request: Option<Value>,
    pub response: String,
    pub content: String,
}

pub trait ChatBackend {
    fn complete(&mut self, messages: &[Message]) -> Result<Exchange>;
    /// Endpoint id written into transcripts.
    fn provenance(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    /// Extra attempts after a failed request.
    pub retries: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "vlm".into(),
            api_key_env: "FORGE_VLM_API_KEY".into(),
            timeout_s: 120.0,
            retries: 2,
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

pub fn request_body(cfg: &EndpointConfig, messages: &[Message]) -> Value {
    let msgs: Vec<Value> = messages
        .iter()
        .map(|m| {
            let content: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text(t) => json!({"type": "text", "text": t}),
                    Part::Image { mime, data } => {
                        json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}})
                    }
                })
                .collect();
            json!({"role": m.role, "content": content})
        })
        .collect();
    json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "messages": msgs,
    })
}

/// Assistant text of a chat-completions response body.
pub fn response_content(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body).map_err(|e| StrategistError::Endpoint(format!("bad response body: {e}")))?;
    let c = &v["choices"][0]["message"]["content"];
    if let Some(s) = c.as_str() {
        return Ok(s.to_string());
    }
    // Some servers return content as a list of text parts.
    if let Some(parts) = c.as_array() {
        let text: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        if !text.is_empty() {
            return Ok(text.join(""));
        }
    }
    Err(StrategistError::Endpoint("response has no choices[0].message.content".into()))
}

/// Blocking HTTP client with timeout and bounded retries.
pub struct HttpBackend {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self { cfg, agent, key }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.cfg.url).header("Content-Type", "application/json");
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status >= 400 {
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}: {text}")));
        }
        Ok(text)
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, messages: &[Message]) -> Result<Exchange> {
        let body = request_body(&self.cfg, messages);
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            match self.attempt(&body) {
                Ok(text) => {
                    let content = response_content(&text)?;
                    return Ok(Exchange { request: Some(body), response: text, content });
                }
                Err((retry, e)) => {
                    log::warn!("endpoint attempt {} failed: {e}", attempt + 1);
                    last = e;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(StrategistError::Endpoint(format!("{} after {} attempt(s): {last}", self.cfg.url, self.cfg.retries + 1)))
    }

    fn provenance(&self) -> String {
        format!("{} model={}", self.cfg.url, self.cfg.model)
    }
}

/// Serves the responses of a recorded transcript in order, offline.
pub struct ReplayBackend {
    provenance: String,
    responses: std::vec::IntoIter<StageRecord>,
}

impl ReplayBackend {
    pub fn new(transcript: &CoTTranscript) -> Self {
        Self { provenance: format!("replay of {}", transcript.provenance), responses: transcript.stages.clone().into_iter() }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&mut self, _messages: &[Message]) -> Result<Exchange> {
        let r = self
            .responses
            .next()
            .ok_or_else(|| StrategistError::Transcript("transcript has fewer responses than stages".into()))?;
        // Prefer re-extracting from the raw body so replay exercises the
        // same parsing as the live client.
        let content = if r.response.is_empty() { r.content } else { response_content(&r.response)? };
        Ok(Exchange { request: None, response: r.response, content })
    }

    fn provenance(&self) -> String {
        self.provenance.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VlmOptions {
    pub limits: PlanLimits,
    pub thresholds: BehaviorThresholds,
    /// Send a PNG of the BEV; otherwise the SVG text is sent as an image.
    pub raster: bool,
}

impl Default for VlmOptions {
    fn default() -> Self {
        Self { limits: PlanLimits::default(), thresholds: BehaviorThresholds::default(), raster: true }
    }
}

/// Body of the last fenced block whose info string is one of `tags`, or of
/// the last fenced block of any kind when none is tagged.
pub fn extract_fenced(text: &str, tags: &[&str]) -> Option<String> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut cur: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("```") {
            match cur.take() {
                None => cur = Some((rest.trim().to_lowercase(), Vec::new())),
                Some((tag, lines)) => blocks.push((tag, lines.join("\n"))),
            }
        } else if let Some((_, lines)) = cur.as_mut() {
            lines.push(line);
        }
    }
    blocks.iter().rev().find(|(t, _)| tags.contains(&t.as_str())).or(blocks.last()).map(|(_, b)| b.clone())
}

/// Parses and validates a stage-3 reply.
pub fn plan_from_reply(reply: &str, scenario: &Scenario, limits: &PlanLimits) -> std::result::Result<GuidancePlan, Vec<PlanIssue>> {
    let block = extract_fenced(reply, &["plan", "json"])
        .ok_or_else(|| vec![PlanIssue::new(String::new(), "no fenced plan block found".to_string())])?;
    let plan = parse_plan(&block)?;
    validate_plan(&plan, scenario, limits)?;
    Ok(plan)
}

fn example_plan(scenario: &Scenario, limits: &PlanLimits) -> String {
    let bv = scenario.agents.iter().map(|a| a.id).find(|id| *id != scenario.sv_id);
    let tpl = |kind, params, weight: f64, t: [f64; 2]| GuidanceTemplate { kind, params, weight, time_domain: t, targets: vec![] };
    let t_sim = limits.t_sim as f64;
    let plan = GuidancePlan {
        scenario_id: scenario.id.clone(),
        adversarial_ids: bv.into_iter().collect(),
        templates: vec![
            tpl(TemplateKind::Speed, TemplateParams { v_target: Some(10.0), ..Default::default() }, 1000.0, [0.0, 30.0]),
            tpl(TemplateKind::Interact, TemplateParams { d_trigger: Some(30.0), ..Default::default() }, 1000.0, [30.0, t_sim]),
            tpl(TemplateKind::Smooth, TemplateParams::default(), 0.01, [0.0, t_sim]),
        ],
        lambda: 1.0,
        n_guide: 5,
        k_guide_start: 10,
        rationale: "why these templates".into(),
    };
    plan_to_string(&plan)
}

fn stage_record(stage: Stage, prompt: &str, ex: Exchange) -> StageRecord {
    StageRecord {
        stage,
        prompt: prompt.to_string(),
        request: ex.request,
        response: ex.response,
        content: ex.content,
        parsed: None,
        error: None,
        timestamp: Some(now()),
    }
}

/// Runs understanding, risk association and formulation, with one reprompt
/// on an invalid plan. Every exchange lands in the transcript, including on
/// failure.
pub fn propose_plan_vlm(
    scenario: &Scenario,
    backend: &mut dyn ChatBackend,
    opts: &VlmOptions,
) -> Result<(GuidancePlan, CoTTranscript)> {
    let mut tr = CoTTranscript::new(&scenario.id, backend.provenance());
    let description = describe_scenario(scenario);
    let svg = render_bev(scenario);
    let image = if opts.raster {
        Part::Image { mime: "image/png".into(), data: base64::engine::general_purpose::STANDARD.encode(rasterize(&svg)?) }
    } else {
        Part::Image { mime: "image/svg+xml".into(), data: base64::engine::general_purpose::STANDARD.encode(&svg) }
    };

    let mut messages = vec![Message::text("system", SYSTEM_PROMPT)];
    let p1 = fill(UNDERSTANDING_PROMPT, &[("description", description)]);
    messages.push(Message { role: "user".into(), parts: vec![Part::Text(p1.clone()), image] });
    let ex = backend.complete(&messages)?;
    messages.push(Message::text("assistant", ex.content.clone()));
    let mut rec = stage_record(Stage::Understanding, &p1, ex);
    rec.parsed = Some(Value::String(rec.content.clone()));
    tr.stages.push(rec);

    let class = classify_sv_behavior(scenario, &opts.thresholds);
    let hint = format!("{} ({:?} confidence)", class.behavior, class.confidence).to_lowercase();
    let p2 = fill(RISK_PROMPT, &[("behavior_hint", hint), ("knowledge", knowledge_table())]);
    messages.push(Message::text("user", p2.clone()));
    let ex = backend.complete(&messages)?;
    messages.push(Message::text("assistant", ex.content.clone()));
    let mut rec = stage_record(Stage::Risk, &p2, ex);
    match extract_fenced(&rec.content, &["json"]).map(|b| serde_json::from_str::<Value>(&b)) {
        Some(Ok(v)) => rec.parsed = Some(v),
        Some(Err(e)) => rec.error = Some(format!("risk block is not JSON: {e}")),
        None => rec.error = Some("no fenced risk block".into()),
    }
    tr.stages.push(rec);

    let ids: Vec<String> =
        scenario.agents.iter().filter(|a| a.id != scenario.sv_id).map(|a| a.id.to_string()).collect();
    let p3 = fill(
        FORMULATION_PROMPT,
        &[
            ("scenario_id", scenario.id.clone()),
            ("agent_ids", ids.join(", ")),
            ("sv_id", scenario.sv_id.to_string()),
            ("t_sim", opts.limits.t_sim.to_string()),
            ("k_steps", opts.limits.k_steps.to_string()),
            ("example", example_plan(scenario, &opts.limits)),
        ],
    );
    let mut prompt = p3;
    let mut stage = Stage::Formulation;
    loop {
        messages.push(Message::text("user", prompt.clone()));
        let ex = backend.complete(&messages)?;
        messages.push(Message::text("assistant", ex.content.clone()));
        let mut rec = stage_record(stage, &prompt, ex);
        match plan_from_reply(&rec.content, scenario, &opts.limits) {
            Ok(plan) => {
                rec.parsed = serde_json::to_value(&plan).ok();
                tr.stages.push(rec);
                tr.plan = Some(plan.clone());
                return Ok((plan, tr));
            }
            Err(issues) => {
                let text = format_issues(&issues);
                rec.error = Some(text.clone());
                tr.stages.push(rec);
                if stage == Stage::Reprompt {
                    tr.failure = Some(text);
                    return Err(StrategistError::Schema { issues, transcript: Box::new(tr) });
                }
                stage = Stage::Reprompt;
                prompt = format!(
                    "The plan was rejected:\n{text}\n\nFix these problems and reply with one corrected fenced plan block."
                );
            }
        }
    }
}

/// Re-runs a recorded session offline.
pub fn replay_transcript(scenario: &Scenario, transcript: &CoTTranscript, opts: &VlmOptions) -> Result<GuidancePlan> {
    let mut backend = ReplayBackend::new(transcript);
    // Replay skips the raster step; the image is not sent anywhere.
    let opts = VlmOptions { raster: false, ..*opts };
    propose_plan_vlm(scenario, &mut backend, &opts).map(|(p, _)| p)
}
