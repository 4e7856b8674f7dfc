//! In-process stand-in for the inpainting service: masked RGB becomes
//! mid-gray, masked depth becomes the mean of the known depth.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use roomweave::backends::protocol::*;
use roomweave::raster::{decode_mask_png, decode_rgb_png, encode_rgb_png, Raster};
use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

#[derive(Clone, Debug)]
pub struct Behavior {
    /// Protocol version written into responses.
    pub protocol: u32,
    /// Answer the first `fail_first` requests with 503.
    pub fail_first: usize,
    /// After this many successful inpaint/depth calls, answer 500.
    pub fail_after: Option<usize>,
    pub delay: Duration,
    /// Health calls answered with 503 before reporting ready.
    pub loading: usize,
}

impl Default for Behavior {
    fn default() -> Self {
        Self {
            protocol: PROTOCOL_VERSION,
            fail_first: 0,
            fail_after: None,
            delay: Duration::ZERO,
            loading: 0,
        }
    }
}

#[derive(Default)]
pub struct Counters {
    pub requests: AtomicUsize,
    pub served: AtomicUsize,
    pub health_calls: AtomicUsize,
    /// Schema violations seen in requests or produced responses.
    pub violations: Mutex<Vec<String>>,
    pub prompts: Mutex<Vec<(String, u64)>>,
}

pub struct Stub {
    pub url: String,
    pub counters: Arc<Counters>,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn reply(status: u16, body: &Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

impl Stub {
    pub fn start(behavior: Behavior) -> Stub {
        let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let counters = Arc::new(Counters::default());
        let (s, c) = (server.clone(), counters.clone());
        let thread = std::thread::spawn(move || {
            let schema = super::schema::load();
            for mut request in s.incoming_requests() {
                let n = c.requests.fetch_add(1, Ordering::SeqCst);
                std::thread::sleep(behavior.delay);
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let (status, value) = if n < behavior.fail_first {
                    (503, json!({"error": "warming up"}))
                } else {
                    handle(&schema, &behavior, &c, request.method(), request.url(), &body)
                };
                let _ = request.respond(reply(status, &value));
            }
        });
        Stub {
            url: format!("http://127.0.0.1:{port}"),
            counters,
            server,
            thread: Some(thread),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        self.counters.violations.lock().unwrap().clone()
    }
}

fn handle(schema: &Value, b: &Behavior, c: &Counters, method: &Method, url: &str, body: &str) -> (u16, Value) {
    let note = |e: String| c.violations.lock().unwrap().push(e);
    let (def, out_def) = match (method, url) {
        (Method::Get, "/health") => {
            let k = c.health_calls.fetch_add(1, Ordering::SeqCst);
            if k < b.loading {
                return (503, json!({"error": "loading"}));
            }
            let v = json!({"protocol": b.protocol, "status": "ok", "model_ids": ["stub-rgb", "stub-depth"]});
            return (200, v);
        }
        (Method::Post, "/inpaint") => ("inpaint_request", "inpaint_response"),
        (Method::Post, "/depth") => ("depth_request", "depth_response"),
        _ => return (404, json!({"error": "not found"})),
    };
    let request: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return (400, json!({"error": e.to_string()})),
    };
    if let Err(e) = super::schema::validate(schema, def, &request) {
        note(e.clone());
        return (400, json!({"error": e}));
    }
    if b.fail_after.is_some_and(|k| c.served.load(Ordering::SeqCst) >= k) {
        return (500, json!({"error": "model crashed"}));
    }
    let result = if def == "inpaint_request" {
        inpaint(b, c, serde_json::from_value(request).unwrap())
    } else {
        depth(b, serde_json::from_value(request).unwrap())
    };
    match result {
        Ok(v) => {
            if let Err(e) = super::schema::validate(schema, out_def, &v) {
                note(format!("response: {e}"));
            }
            c.served.fetch_add(1, Ordering::SeqCst);
            (200, v)
        }
        Err(e) => (422, json!({"error": e})),
    }
}

fn inpaint(b: &Behavior, c: &Counters, req: InpaintRequest) -> Result<Value, String> {
    c.prompts.lock().unwrap().push((req.prompt.clone(), req.seed));
    let image_png = decode_b64(&req.image).map_err(|e| e.to_string())?;
    let image = decode_rgb_png(&image_png).map_err(|e| e.to_string())?;
    let mask = decode_mask_png(&decode_b64(&req.mask).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if !image.same_dims(&mask) {
        return Err("image and mask sizes differ".into());
    }
    let bytes = if mask.any() {
        let gray = 128.0 / 255.0;
        let out = Raster::from_fn(image.width(), image.height(), |u, v| {
            if mask.at(u, v) {
                [gray; 3]
            } else {
                image.at(u, v)
            }
        });
        encode_rgb_png(&out).unwrap()
    } else {
        image_png
    };
    Ok(json!({"protocol": b.protocol, "image": encode_b64(&bytes)}))
}

fn depth(b: &Behavior, req: DepthRequest) -> Result<Value, String> {
    let known = decode_depth_grid(&req.known_depth).map_err(|e| e.to_string())?;
    let mask = decode_mask_png(&decode_b64(&req.mask).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if !known.same_dims(&mask) {
        return Err("depth and mask sizes differ".into());
    }
    let values: Vec<f64> = known
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(d, m)| !**m && **d > 0.0)
        .map(|(d, _)| *d)
        .collect();
    let mean = if values.is_empty() {
        1.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let out = Raster::from_fn(known.width(), known.height(), |u, v| {
        if mask.at(u, v) {
            mean as f32 as f64
        } else {
            known.at(u, v)
        }
    });
    Ok(json!({"protocol": b.protocol, "depth": encode_depth_grid(&out)}))
}
