use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{status::ERROR_PRIORITY, FetchResponse, Fetcher, HarnessError, MetadataRecord, RawResponse, ITEM_NOT_EXIST_RAW};

/// How to probe a live endpoint and read its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProbeConfig {
    /// Request URL with `{id}` where the decimal ID goes.
    pub url_template: String,
    /// Substrings that mark a hidden-post status. Each marker found in the
    /// body is reported as a raw status.
    pub status_markers: Vec<String>,
    /// Substrings that mean "this ID never existed".
    pub not_found_markers: Vec<String>,
    /// JSON pointer to the metadata object in a successful response; the
    /// whole body when unset.
    pub metadata_pointer: Option<String>,
    pub timeout_seconds: f64,
    pub max_redirects: u32,
    pub user_agent: Option<String>,
}

impl Default for HttpProbeConfig {
    fn default() -> Self {
        Self {
            url_template: String::new(),
            status_markers: ERROR_PRIORITY.iter().map(|s| s.as_str().to_string()).collect(),
            not_found_markers: vec![ITEM_NOT_EXIST_RAW.to_string(), "item_not_exist".to_string()],
            metadata_pointer: None,
            timeout_seconds: 10.0,
            max_redirects: 10,
            user_agent: None,
        }
    }
}

/// Blocking HTTP fetcher. Statuses 429 and 5xx count as transport errors
/// and get retried; 404 means the ID does not exist.
pub struct HttpFetcher {
    agent: Agent,
    config: HttpProbeConfig,
}

impl HttpFetcher {
    pub fn new(config: HttpProbeConfig) -> Result<Self, HarnessError> {
        if !config.url_template.contains("{id}") {
            return Err(HarnessError::Http("url_template must contain {id}".into()));
        }
        if !(config.timeout_seconds > 0.0) {
            return Err(HarnessError::Http("timeout_seconds must be positive".into()));
        }
        let mut builder = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_seconds)))
            .http_status_as_error(false)
            .max_redirects(config.max_redirects);
        if let Some(ua) = &config.user_agent {
            builder = builder.user_agent(ua.as_str());
        }
        Ok(Self { agent: builder.build().into(), config })
    }

    pub fn url_for(&self, id: u64) -> String {
        self.config.url_template.replace("{id}", &id.to_string())
    }

    fn interpret(&self, id: u64, code: u16, body: &str) -> RawResponse {
        if code == 404 {
            return RawResponse::NotExist;
        }
        if code == 429 || code >= 500 {
            return RawResponse::Transport(format!("http {code}"));
        }
        let found: Vec<String> = self
            .config
            .status_markers
            .iter()
            .filter(|m| body.contains(m.as_str()))
            .cloned()
            .collect();
        if !found.is_empty() {
            return RawResponse::Statuses(found);
        }
        if self.config.not_found_markers.iter().any(|m| body.contains(m.as_str())) {
            return RawResponse::NotExist;
        }
        match self.parse_metadata(id, body) {
            Some(meta) => RawResponse::Found(meta),
            None => RawResponse::Statuses(vec![format!("unparsed_response_{code}")]),
        }
    }

    fn parse_metadata(&self, id: u64, body: &str) -> Option<MetadataRecord> {
        let value: serde_json::Value = serde_json::from_str(body).ok()?;
        let node = match &self.config.metadata_pointer {
            Some(p) => value.pointer(p)?.clone(),
            None => value,
        };
        let mut meta: MetadataRecord = serde_json::from_value(node).ok()?;
        meta.id = id;
        Some(meta)
    }
}

fn now_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, id: u64) -> FetchResponse {
        let raw = match self.agent.get(&self.url_for(id)).call() {
            Ok(mut resp) => {
                let code = resp.status().as_u16();
                match resp.body_mut().read_to_string() {
                    Ok(body) => self.interpret(id, code, &body),
                    Err(e) => RawResponse::Transport(e.to_string()),
                }
            }
            Err(e) => RawResponse::Transport(e.to_string()),
        };
        FetchResponse { raw, fetched_at: now_seconds() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Minimal HTTP/1.1 server answering by the last path segment.
    fn serve(requests: usize) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for stream in listener.incoming().take(requests) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut line = String::new();
                while reader.read_line(&mut line).unwrap() > 2 {
                    line.clear();
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let (code, location, body) = match path.rsplit('/').next().unwrap() {
                    "1" => (200, None, r#"{"data":{"id":0,"create_time_metadata":5,"view_count":3,"like_count":1,"share_count":0,"comment_count":0,"duration_seconds":9.5,"author_id":77}}"#.to_string()),
                    "2" => (200, None, r#"{"statusMsg":"status_reviewing","extra":"status_self_see"}"#.to_string()),
                    "3" => (200, None, r#"{"statusMsg":"item doesn't exist"}"#.to_string()),
                    "4" => (404, None, String::new()),
                    "5" => (503, None, String::new()),
                    "6" => (302, Some(format!("http://{addr}/v/1")), String::new()),
                    _ => (200, None, "<html>".to_string()),
                };
                let mut head = format!("HTTP/1.1 {code} X\r\nContent-Length: {}\r\nConnection: close\r\n", body.len());
                if let Some(loc) = location {
                    head.push_str(&format!("Location: {loc}\r\n"));
                }
                stream.write_all(format!("{head}\r\n{body}").as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v/{{id}}")
    }

    #[test]
    fn interprets_responses() {
        let template = serve(8);
        let fetcher = HttpFetcher::new(HttpProbeConfig {
            url_template: template,
            metadata_pointer: Some("/data".into()),
            max_redirects: 3,
            ..HttpProbeConfig::default()
        })
        .unwrap();
        match fetcher.fetch(1).raw {
            RawResponse::Found(meta) => {
                assert_eq!(meta.id, 1);
                assert_eq!(meta.author_id, 77);
                assert_eq!(meta.location_created, None);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            fetcher.fetch(2).raw,
            RawResponse::Statuses(vec!["status_self_see".into(), "status_reviewing".into()])
        );
        assert_eq!(fetcher.fetch(3).raw, RawResponse::NotExist);
        assert_eq!(fetcher.fetch(4).raw, RawResponse::NotExist);
        assert!(matches!(fetcher.fetch(5).raw, RawResponse::Transport(_)));
        match fetcher.fetch(6).raw {
            RawResponse::Found(meta) => assert_eq!(meta.id, 6),
            other => panic!("redirect not followed: {other:?}"),
        }
        assert_eq!(fetcher.fetch(9).raw, RawResponse::Statuses(vec!["unparsed_response_200".into()]));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(HttpFetcher::new(HttpProbeConfig { url_template: "http://x/".into(), ..HttpProbeConfig::default() }).is_err());
    }

    #[test]
    fn connection_refused_is_transport() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let fetcher = HttpFetcher::new(HttpProbeConfig {
            url_template: format!("http://127.0.0.1:{port}/{{id}}"),
            timeout_seconds: 2.0,
            ..HttpProbeConfig::default()
        })
        .unwrap();
        assert!(matches!(fetcher.fetch(1).raw, RawResponse::Transport(_)));
    }
}
