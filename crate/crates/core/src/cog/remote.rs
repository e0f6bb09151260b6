//! JSON-over-HTTP grounder and reasoner.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backends::{Grounder, Reasoner, Reasoning};
use crate::error::BackendError;
use crate::scene::{GroundedBox, Scene, SceneSummary};

pub const URL_ENV: &str = "RGROUND_BACKEND_URL";
pub const TOKEN_ENV: &str = "RGROUND_BACKEND_TOKEN";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Client for a server exposing `POST /ground` and `POST /reason`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct GroundRequest<'a> {
    question: &'a str,
    scene: &'a Scene,
}

#[derive(Deserialize)]
struct GroundResponse {
    boxes: Vec<GroundedBox>,
}

#[derive(Serialize)]
struct ReasonRequest<'a> {
    question: &'a str,
    scene_summary: &'a SceneSummary,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(BackendError::Other {
                step: "config".into(),
                message: format!("backend url must start with http:// or https://, got {base_url:?}"),
            });
        }
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Ok(RemoteBackend { base_url, token, agent })
    }

    /// Reads the base URL and optional bearer token from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, BackendError> {
        let url = std::env::var(URL_ENV).map_err(|_| BackendError::Other {
            step: "config".into(),
            message: format!("{URL_ENV} is not set"),
        })?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(url, token, timeout)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, step: &str, body: &B) -> Result<R, BackendError> {
        let mut req = self.agent.post(&format!("{}/{step}", self.base_url));
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Status(status, _) => BackendError::Status { step: step.into(), status },
            ureq::Error::Transport(t) => BackendError::Transport {
                step: step.into(),
                message: t.to_string(),
            },
        })?;
        let text = resp.into_string().map_err(|e| BackendError::Transport {
            step: step.into(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
            step: step.into(),
            message: e.to_string(),
        })
    }
}

impl Grounder for RemoteBackend {
    fn ground(&self, question: &str, scene: &Scene) -> Result<Vec<GroundedBox>, BackendError> {
        let r: GroundResponse = self.post("ground", &GroundRequest { question, scene })?;
        Ok(r.boxes)
    }
}

impl Reasoner for RemoteBackend {
    fn reason(&self, question: &str, summary: &SceneSummary) -> Result<Reasoning, BackendError> {
        self.post(
            "reason",
            &ReasonRequest {
                question,
                scene_summary: summary,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn serve_once(status: &str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let status = status.to_string();
        let h = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut req = String::new();
            loop {
                let n = s.read(&mut buf).unwrap();
                req.push_str(&String::from_utf8_lossy(&buf[..n]));
                if let Some(i) = req.find("\r\n\r\n") {
                    let len = req[..i]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if req.len() >= i + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            write!(s, "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
            req
        });
        (url, h)
    }

    fn summary() -> SceneSummary {
        SceneSummary {
            scene_id: "s".into(),
            categories: Default::default(),
        }
    }

    #[test]
    fn reason_round_trip_with_token() {
        let (url, h) = serve_once("200 OK", r#"{"answer_text":"a","intent":"Where is the bed in this 3D scene?"}"#);
        let b = RemoteBackend::new(url, Some("tok".into()), DEFAULT_TIMEOUT).unwrap();
        let r = b.reason("q", &summary()).unwrap();
        assert_eq!(r.intent, "Where is the bed in this 3D scene?");
        let req = h.join().unwrap();
        assert!(req.starts_with("POST /reason "));
        assert!(req.contains("Bearer tok"));
        assert!(req.contains(r#""scene_summary""#));
    }

    #[test]
    fn status_and_malformed_errors() {
        let (url, h) = serve_once("500 Internal Server Error", "{}");
        let b = RemoteBackend::new(url, None, DEFAULT_TIMEOUT).unwrap();
        assert!(matches!(b.reason("q", &summary()), Err(BackendError::Status { status: 500, .. })));
        h.join().unwrap();
        let (url, h) = serve_once("200 OK", "not json");
        let b = RemoteBackend::new(url, None, DEFAULT_TIMEOUT).unwrap();
        assert!(matches!(b.reason("q", &summary()), Err(BackendError::Malformed { .. })));
        h.join().unwrap();
    }

    #[test]
    fn unreachable_and_bad_url() {
        let b = RemoteBackend::new("http://127.0.0.1:9", None, Duration::from_secs(2)).unwrap();
        assert!(matches!(b.reason("q", &summary()), Err(BackendError::Transport { .. })));
        assert!(RemoteBackend::new("localhost:1", None, DEFAULT_TIMEOUT).is_err());
    }
}
