//! Minimal HTTP/1.1 server on a std listener for client tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

type Handler = dyn Fn(&serde_json::Value, usize) -> (u16, String) + Send + Sync;

pub struct MockServer {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
    pub peak: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    pub auth: Arc<Mutex<Vec<Option<String>>>>,
}

impl MockServer {
    /// `handler(body, call_index)` returns status and response body.
    /// `delay` is held while the request counts as in flight.
    pub fn start<F>(delay: Duration, handler: F) -> Self
    where
        F: Fn(&serde_json::Value, usize) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let live = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let server = Self {
            url,
            calls: calls.clone(),
            peak: peak.clone(),
            bodies: bodies.clone(),
            auth: auth.clone(),
        };
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (calls, peak, live, bodies, auth, handler) =
                    (calls.clone(), peak.clone(), live.clone(), bodies.clone(), auth.clone(), handler.clone());
                std::thread::spawn(move || {
                    let _ = serve(stream, delay, &calls, &peak, &live, &bodies, &auth, &*handler);
                });
            }
        });
        server
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[allow(clippy::too_many_arguments)]
fn serve(
    stream: TcpStream,
    delay: Duration,
    calls: &AtomicUsize,
    peak: &AtomicUsize,
    live: &AtomicUsize,
    bodies: &Mutex<Vec<serde_json::Value>>,
    auth: &Mutex<Vec<Option<String>>>,
    handler: &Handler,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let mut length = 0usize;
        let mut bearer = None;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h)?;
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                let k = k.trim().to_ascii_lowercase();
                if k == "content-length" {
                    length = v.trim().parse().unwrap_or(0);
                } else if k == "authorization" {
                    bearer = Some(v.trim().to_string());
                }
            }
        }
        let mut raw = vec![0u8; length];
        reader.read_exact(&mut raw)?;
        let body: serde_json::Value = serde_json::from_slice(&raw).unwrap_or(serde_json::Value::Null);

        let index = calls.fetch_add(1, Ordering::SeqCst);
        let now = live.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(delay);
        let (status, text) = handler(&body, index);
        live.fetch_sub(1, Ordering::SeqCst);
        bodies.lock().unwrap().push(body);
        auth.lock().unwrap().push(bearer);

        let mut out = stream.try_clone()?;
        write!(
            out,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
            text.len()
        )?;
        out.flush()?;
    }
    Ok(())
}
