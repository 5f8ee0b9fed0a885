//! Blocking JSON-over-HTTP plumbing shared by the translation and
//! embedding clients.

use std::time::Duration;

use serde::Serialize;

/// Outcome of one POST attempt.
#[derive(Debug)]
pub(crate) enum PostError {
    /// Connection, timeout, 5xx or 429: worth retrying.
    Transient(String),
    /// Any other non-success status.
    Rejected(u16, String),
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Reads a bearer token from `var`, if set and non-empty.
pub(crate) fn bearer_from_env(var: Option<&str>) -> Option<String> {
    let var = var?;
    std::env::var(var).ok().filter(|t| !t.trim().is_empty())
}

pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: &impl Serialize,
) -> Result<String, PostError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = token {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| PostError::Transient(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| PostError::Transient(e.to_string()))?;
    match status {
        200..=299 => Ok(text),
        429 | 500..=599 => Err(PostError::Transient(format!("HTTP {status}: {text}"))),
        _ => Err(PostError::Rejected(status, text)),
    }
}

/// True when a TCP connection to the URL's host can be opened.
pub(crate) fn reachable(url: &str, timeout: Duration) -> Result<(), String> {
    use std::net::{TcpStream, ToSocketAddrs};

    let rest = url
        .split_once("://")
        .map(|(_, r)| r)
        .ok_or_else(|| format!("not an absolute URL: {url}"))?;
    let authority = rest.split('/').next().unwrap_or(rest);
    let authority = authority.rsplit('@').next().unwrap_or(authority);
    let has_port = authority.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok())
        && !authority.ends_with(']');
    let target = if has_port {
        authority.to_string()
    } else if url.starts_with("https") {
        format!("{authority}:443")
    } else {
        format!("{authority}:80")
    };
    let addrs = target
        .to_socket_addrs()
        .map_err(|e| format!("cannot resolve {target}: {e}"))?;
    let mut last = format!("no addresses for {target}");
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(_) => return Ok(()),
            Err(e) => last = format!("{addr}: {e}"),
        }
    }
    Err(last)
}
