//! HTTP client against an in-process server speaking the generator protocol.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use texbake::generator::{
    GenerationParams, GeneratorError, GeneratorRequest, ImageGenerator, MockGenerator, MockKind, RemoteConfig,
    RemoteGenerator, WireRequest, WireResponse,
};
use texbake::imaging::{to_u8, ColorImage, GrayImage, MaskImage};

const GOLDEN_REQUEST: &str = include_str!("fixtures/wire_request.json");
const GOLDEN_RESPONSE: &str = include_str!("fixtures/wire_response.json");

/// The request stored in the golden fixture, already on the 8-bit grid.
fn golden_request() -> GeneratorRequest {
    let depth = GrayImage::from_fn(8, 8, |x, y| if (2..6).contains(&x) && (1..7).contains(&y) { (x + y) as f64 / 16.0 } else { 0.0 });
    let mask = MaskImage::from_fn(8, 8, |x, _| x >= 4);
    let init = ColorImage::from_fn(8, 8, |x, y| if x < 4 { [x as f64 / 8.0, y as f64 / 8.0, 0.25] } else { [0.5; 3] });
    GeneratorRequest::new(
        GenerationParams { prompt: "a wooden crate, left side view".into(), w_depth: 1.0, w_inpaint: 1.0, strength: 1.0, seed: 1234 },
        depth.map(|v| to_u8(*v) as f64 / 255.0),
        mask,
        init.quantized(),
    )
}

#[derive(Clone, Copy)]
enum Behavior {
    Mock(MockKind),
    Status(u16),
    Garbage,
    WrongSize,
    Sleep(Duration),
}

struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, Vec<u8>)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((line, body))
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body.as_bytes());
}

fn handle(mut stream: TcpStream, behavior: Behavior) {
    let Some((line, body)) = read_request(&mut stream) else {
        return;
    };
    if line.starts_with("GET /v1/health") {
        return respond(&mut stream, 200, "{}");
    }
    match behavior {
        Behavior::Status(code) => respond(&mut stream, code, "{\"detail\":\"loading\"}"),
        Behavior::Garbage => respond(&mut stream, 200, "{\"rgb_png_b64\": 17"),
        Behavior::Sleep(d) => {
            thread::sleep(d);
            respond(&mut stream, 500, "{}");
        }
        Behavior::Mock(_) | Behavior::WrongSize => {
            let wire: WireRequest = serde_json::from_slice(&body).expect("client sends valid JSON");
            let req = wire.decode().expect("client sends a valid request");
            let kind = if let Behavior::Mock(kind) = behavior { kind } else { MockKind::Flat };
            let mut rgb = MockGenerator::new(kind).generate(&req).unwrap().rgb;
            if let Behavior::WrongSize = behavior {
                rgb = rgb.crop(0, 0, rgb.width() - 1, rgb.height());
            }
            let resp = WireResponse::encode(&rgb, "test-server").unwrap();
            respond(&mut stream, 200, &serde_json::to_string(&resp).unwrap());
        }
    }
}

fn serve(behavior: Behavior) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            counter.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || handle(stream, behavior));
        }
    });
    Server { url, hits }
}

fn client(url: &str) -> RemoteGenerator {
    RemoteGenerator::new(url, RemoteConfig { timeout: Duration::from_secs(10), max_in_flight: 2 })
}

#[test]
fn golden_request_decodes_to_known_images() {
    let wire: WireRequest = serde_json::from_str(GOLDEN_REQUEST).unwrap();
    assert_eq!(wire.size, 8);
    assert_eq!(wire.width, None);
    assert_eq!(wire.decode().unwrap(), golden_request());
}

#[test]
fn encoder_agrees_with_golden_request() {
    let golden: serde_json::Value = serde_json::from_str(GOLDEN_REQUEST).unwrap();
    let encoded = serde_json::to_value(WireRequest::encode(&golden_request()).unwrap()).unwrap();
    for key in ["prompt", "seed", "strength", "w_depth", "w_inpaint", "size"] {
        assert_eq!(encoded[key], golden[key], "{key}");
    }
    let keys = |v: &serde_json::Value| {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(keys(&encoded), keys(&golden));
    let round_trip: WireRequest = serde_json::from_value(encoded).unwrap();
    assert_eq!(round_trip.decode().unwrap(), golden_request());
}

#[test]
fn golden_response_decodes() {
    let wire: WireResponse = serde_json::from_str(GOLDEN_RESPONSE).unwrap();
    let expected = MockGenerator::new(MockKind::DepthShade).generate(&golden_request()).unwrap().rgb;
    assert_eq!(wire.decode_rgb().unwrap(), expected.quantized());
    assert_eq!(wire.generator_id, "mock:depthshade");
}

#[test]
fn round_trip_matches_local_mock() {
    let server = serve(Behavior::Mock(MockKind::Checker));
    let gen = client(&server.url);
    assert!(gen.health().unwrap());
    let req = golden_request();
    let resp = gen.generate(&req).unwrap();
    let local = MockGenerator::new(MockKind::Checker).generate(&req).unwrap().rgb.quantized();
    assert_eq!(resp.rgb, local);
    assert_eq!(resp.generator_id, "test-server");
}

#[test]
fn grid_requests_carry_their_width() {
    let server = serve(Behavior::Mock(MockKind::DepthShade));
    let single = golden_request();
    let (grid, layout) = texbake::generator::make_grid(
        &[single.depth.clone(), single.depth.clone()],
        &[single.inpaint_mask.clone(), single.inpaint_mask.clone()],
        &[single.init_rgb.clone(), single.init_rgb.clone()],
        single.params.clone(),
    )
    .unwrap();
    let wire = WireRequest::encode(&grid).unwrap();
    assert_eq!((wire.width, wire.size), (Some(16), 8));
    let rgb = client(&server.url).generate(&grid).unwrap().rgb;
    assert_eq!(rgb.dims(), (16, 8));
    let halves = layout.split(&rgb);
    assert_eq!(halves[0], halves[1]);
}

#[test]
fn batch_preserves_order() {
    let server = serve(Behavior::Mock(MockKind::Checker));
    let gen = client(&server.url);
    let reqs: Vec<_> = (0..4)
        .map(|seed| {
            let mut r = golden_request();
            r.params.seed = seed;
            r
        })
        .collect();
    let out = gen.generate_batch(&reqs).unwrap();
    assert_eq!(out.len(), 4);
    for (req, resp) in reqs.iter().zip(out) {
        let local = MockGenerator::new(MockKind::Checker).generate(req).unwrap().rgb.quantized();
        assert_eq!(resp.unwrap().rgb, local);
    }
    assert!(server.hits.load(Ordering::SeqCst) >= 4);
    assert_eq!(gen.generate_batch(&[]), Err(GeneratorError::InvalidBatch));
}

#[test]
fn non_200_is_backend_unavailable() {
    let server = serve(Behavior::Status(503));
    let err = client(&server.url).generate(&golden_request()).unwrap_err();
    assert!(matches!(err, GeneratorError::BackendUnavailable(ref m) if m.contains("503")), "{err:?}");
}

#[test]
fn malformed_body_is_protocol_error() {
    let server = serve(Behavior::Garbage);
    let err = client(&server.url).generate(&golden_request()).unwrap_err();
    assert!(matches!(err, GeneratorError::Protocol(_)), "{err:?}");
}

#[test]
fn wrong_size_is_protocol_error() {
    let server = serve(Behavior::WrongSize);
    let err = client(&server.url).generate(&golden_request()).unwrap_err();
    assert!(matches!(err, GeneratorError::Protocol(_)), "{err:?}");
}

#[test]
fn slow_backend_times_out() {
    let server = serve(Behavior::Sleep(Duration::from_secs(3)));
    let gen = RemoteGenerator::new(&server.url, RemoteConfig { timeout: Duration::from_millis(300), max_in_flight: 1 });
    let err = gen.generate(&golden_request()).unwrap_err();
    assert!(matches!(err, GeneratorError::Timeout(_)), "{err:?}");
}

#[test]
fn refused_connection_is_backend_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = client(&format!("http://127.0.0.1:{port}")).generate(&golden_request()).unwrap_err();
    assert!(matches!(err, GeneratorError::BackendUnavailable(_)), "{err:?}");
}

#[test]
fn invalid_requests_never_hit_the_network() {
    let server = serve(Behavior::Mock(MockKind::Flat));
    let mut req = golden_request();
    req.params.strength = 1.5;
    let err = client(&server.url).generate(&req).unwrap_err();
    assert!(matches!(err, GeneratorError::InvalidRequest(_)));
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
}
