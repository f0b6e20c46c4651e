//! Chat-completion client over HTTP.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};

use super::{BackendError, Capabilities, ModelBackend};
use crate::prompt::{PromptBundle, PromptPart};

pub const ENV_URL: &str = "PGDS_API_URL";
pub const ENV_KEY: &str = "PGDS_API_KEY";
pub const ENV_MODEL: &str = "PGDS_MODEL";

#[derive(Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Directory that relative image paths resolve against.
    pub image_root: PathBuf,
    pub capabilities: Capabilities,
}

impl std::fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("image_root", &self.image_root)
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            image_root: PathBuf::from("."),
            capabilities: Capabilities::MULTI_IMAGE,
        }
    }

    /// Reads endpoint, credential and model name from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| BackendError::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = RemoteConfig::new(url, model);
        cfg.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { cfg, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn resolve(&self, image: &str) -> PathBuf {
        let p = Path::new(image);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.cfg.image_root.join(p)
        }
    }

    /// Builds the request body; images are read and base64-embedded here.
    pub fn request_body(&self, bundle: &PromptBundle) -> Result<Value, BackendError> {
        let mut content = Vec::new();
        for part in bundle.parts() {
            match part {
                PromptPart::Text(text) => content.push(json!({"type": "text", "text": text})),
                PromptPart::Image(path) => {
                    let full = self.resolve(&path);
                    let bytes = std::fs::read(&full).map_err(|e| {
                        BackendError::Config(format!("cannot read image {}: {e}", full.display()))
                    })?;
                    let url = format!("data:{};base64,{}", mime_for(&full), STANDARD.encode(bytes));
                    content.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
            }
        }
        Ok(json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
        }))
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

fn map_error(e: ureq::Error, timeout: Duration) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout(timeout),
        ureq::Error::Io(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) =>
        {
            BackendError::Timeout(timeout)
        }
        other => BackendError::Transport(other.to_string()),
    }
}

/// Text of the first choice in a chat-completion response.
pub fn first_completion_text(body: &Value) -> Result<String, BackendError> {
    let content = body.pointer("/choices/0/message/content").ok_or_else(|| {
        BackendError::Protocol("response has no choices[0].message.content".into())
    })?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(BackendError::Protocol(format!(
            "unexpected content type: {other}"
        ))),
    }
}

impl ModelBackend for RemoteBackend {
    fn respond(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        self.cfg.capabilities.check(bundle)?;
        let body = self.request_body(bundle)?;
        log::debug!(
            "POST {} model={} parts={} images={} auth={}",
            self.cfg.url,
            self.cfg.model,
            body["messages"][0]["content"]
                .as_array()
                .map_or(0, Vec::len),
            bundle.image_count(),
            if self.cfg.api_key.is_some() {
                "Bearer <redacted>"
            } else {
                "none"
            },
        );
        let mut req = self
            .agent
            .post(&self.cfg.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let timeout = self.cfg.timeout;
        let mut resp = req
            .send(body.to_string().as_bytes())
            .map_err(|e| map_error(e, timeout))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| map_error(e, timeout))?;
        log::debug!("HTTP {status}, {} bytes", text.len());
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("invalid JSON: {e}")))?;
        first_completion_text(&value)
    }

    fn capabilities(&self) -> Capabilities {
        self.cfg.capabilities
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::prompt::{build_prompt, Language};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves one request, replying with `status` and `body` after `delay`.
    fn stub(status: u16, body: String, delay: Duration) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(format!("{head}{}", String::from_utf8_lossy(&buf)));
            thread::sleep(delay);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        });
        (format!("http://{addr}/v1/chat/completions"), rx)
    }

    fn completion(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn bundle() -> PromptBundle {
        build_prompt(&[], &Sample::new("q", "配文"), Language::Zh).unwrap()
    }

    #[test]
    fn echo_stub_text_is_returned_verbatim() {
        let (url, rx) = stub(200, completion("是否讽刺: 否"), Duration::ZERO);
        let mut cfg = RemoteConfig::new(url, "m");
        cfg.api_key = Some("sk-secret".into());
        let got = RemoteBackend::new(cfg.clone()).respond(&bundle()).unwrap();
        assert_eq!(got, "是否讽刺: 否");
        let req = rx.recv().unwrap();
        assert!(req.contains("Bearer sk-secret"));
        assert!(req.contains("\"messages\""));
        assert!(!format!("{cfg:?}").contains("sk-secret"));
    }

    #[test]
    fn slow_server_times_out() {
        let (url, _rx) = stub(200, completion("late"), Duration::from_millis(1500));
        let mut cfg = RemoteConfig::new(url, "m");
        cfg.timeout = Duration::from_millis(200);
        let err = RemoteBackend::new(cfg).respond(&bundle()).unwrap_err();
        assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
    }

    #[test]
    fn non_2xx_is_status_error() {
        let (url, _rx) = stub(503, "{}".into(), Duration::ZERO);
        let err = RemoteBackend::new(RemoteConfig::new(url, "m"))
            .respond(&bundle())
            .unwrap_err();
        assert_eq!(
            err,
            BackendError::Status {
                status: 503,
                body: "{}".into()
            }
        );
        assert!(err.is_transient());
    }

    #[test]
    fn refused_connection_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = RemoteBackend::new(RemoteConfig::new(format!("http://{addr}/"), "m"))
            .respond(&bundle())
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
    }

    #[test]
    fn capability_error_precedes_network() {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:9/never", "m");
        cfg.capabilities.supports_multi_image = false;
        let q = Sample::new("q", "x").with_image("a.png");
        let d = Sample::new("d", "y").with_label(0).with_image("b.png");
        let b = build_prompt(&[d], &q, Language::En).unwrap();
        let err = RemoteBackend::new(cfg).respond(&b).unwrap_err();
        assert!(matches!(err, BackendError::Capability(_)));
    }

    #[test]
    fn images_are_inlined_as_data_urls() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), [1u8, 2, 3]).unwrap();
        let mut cfg = RemoteConfig::new("http://unused", "m");
        cfg.image_root = dir.path().to_path_buf();
        let b = build_prompt(
            &[],
            &Sample::new("q", "x").with_image("a.png"),
            Language::En,
        )
        .unwrap();
        let body = RemoteBackend::new(cfg).request_body(&b).unwrap();
        let s = body.to_string();
        assert!(s.contains("data:image/png;base64,AQID"));
    }

    #[test]
    fn content_parts_are_joined() {
        let v = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(first_completion_text(&v).unwrap(), "ab");
        assert!(first_completion_text(&json!({})).is_err());
    }
}
