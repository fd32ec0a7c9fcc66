use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use rcbf_core::delay::DelayModel;
use rcbf_core::task::{TaskSpec, Workspace};
use rcbf_core::{Obstacle, SafetyParams, Vec3};
use rcbf_service::protocol::{ServerMessage, StateFrame};
use rcbf_service::{Server, ServiceConfig};
use tokio::net::TcpStream;
use tokio::time::{timeout, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn task(obstacles: Vec<Obstacle>) -> TaskSpec {
    TaskSpec {
        seed: 0,
        workspace: Workspace::default(),
        start_m: [2.0, 0.0, 4.0],
        targets_m: vec![[7.5, 0.0, 7.5]],
        obstacles,
    }
}

async fn start(task: TaskSpec, delay: DelayModel) -> Server {
    let mut config = ServiceConfig::default();
    config.run.delay = delay;
    Server::bind("127.0.0.1:0", task, config).await.unwrap()
}

async fn connect(server: &Server) -> Ws {
    let url = format!("ws://{}", server.local_addr());
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn next_msg(ws: &mut Ws) -> ServerMessage {
    loop {
        let frame = timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .unwrap();
        if let Message::Text(text) = frame {
            return serde_json::from_str(text.as_str()).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, json: String) {
    ws.send(Message::text(json)).await.unwrap();
}

async fn command(ws: &mut Ws, seq: u64, u: [f64; 3]) {
    send(ws, format!(r#"{{"type":"command","seq":{seq},"u":[{},{},{}]}}"#, u[0], u[1], u[2])).await;
}

/// Collects state frames for `secs` seconds of wall time.
async fn states_for(ws: &mut Ws, secs: f64) -> Vec<StateFrame> {
    let end = Instant::now() + Duration::from_secs_f64(secs);
    let mut out = Vec::new();
    while Instant::now() < end {
        if let ServerMessage::State(s) = next_msg(ws).await {
            out.push(s);
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn task_first_then_monotone_frames() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut ws = connect(&server).await;
    let first = next_msg(&mut ws).await;
    assert!(matches!(first, ServerMessage::Task(_)));
    assert_eq!(first.seq(), 1);
    let mut last = first.seq();
    let mut saw_metrics = false;
    for _ in 0..40 {
        let m = next_msg(&mut ws).await;
        assert!(m.seq() > last);
        last = m.seq();
        saw_metrics |= matches!(m, ServerMessage::Metrics(_));
    }
    assert!(saw_metrics);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn no_operator_holds_position() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut ws = connect(&server).await;
    let states = states_for(&mut ws, 0.6).await;
    assert!(states.len() >= 10, "about 30 Hz expected, got {}", states.len());
    for s in &states {
        assert_eq!(s.pos, [2.0, 0.0, 4.0]);
        assert_eq!(s.min_surf_dist, None);
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn command_is_tracked_then_deadman_stops() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut ws = connect(&server).await;
    for seq in 1..=20 {
        command(&mut ws, seq, [0.3, 0.0, 0.0]).await;
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let s = states_for(&mut ws, 0.1).await.pop().unwrap();
    assert!((Vec3::from(s.vel) - Vec3::new(0.3, 0.0, 0.0)).norm() < 0.015, "{:?}", s.vel);

    // Silence: after the 0.5 s deadman plus a couple of control ticks the robot stops.
    tokio::time::sleep(Duration::from_millis(900)).await;
    let s = states_for(&mut ws, 0.1).await.pop().unwrap();
    assert_eq!(s.u_des, [0.0; 3]);
    assert!(Vec3::from(s.vel).norm() < 1e-6, "{:?}", s.vel);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn second_operator_gets_busy() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut first = connect(&server).await;
    assert!(matches!(next_msg(&mut first).await, ServerMessage::Task(_)));
    let mut second = connect(&server).await;
    assert!(matches!(next_msg(&mut second).await, ServerMessage::Busy(_)));
    // The busy connection is closed; the first keeps streaming.
    let closed = timeout(Duration::from_secs(2), async {
        loop {
            match second.next().await {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return true,
                _ => {}
            }
        }
    })
    .await
    .unwrap();
    assert!(closed);
    assert!(!states_for(&mut first, 0.2).await.is_empty());

    // Once the operator leaves, the seat frees up.
    drop(first);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let mut third = connect(&server).await;
    assert!(matches!(next_msg(&mut third).await, ServerMessage::Task(_)));
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_frames_get_error_and_connection_survives() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut ws = connect(&server).await;
    for bad in [
        "{not json".to_string(),
        r#"{"type":"command","seq":1,"u":[1,2]}"#.to_string(),
        r#"{"type":"config","delay":{"kind":"constant","d_ms":-5}}"#.to_string(),
    ] {
        send(&mut ws, bad).await;
        loop {
            if let ServerMessage::Error(e) = next_msg(&mut ws).await {
                assert!(!e.message.is_empty());
                break;
            }
        }
    }
    // Still accepted afterwards.
    for seq in 1..=10 {
        command(&mut ws, seq, [0.0, 0.0, 0.2]).await;
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let s = states_for(&mut ws, 0.1).await.pop().unwrap();
    assert!(s.vel[2] > 0.15);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn out_of_range_commands_never_reach_the_plant() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut ws = connect(&server).await;
    let u_b = 0.5;
    let v_max = SafetyParams::default().v_max_norm;
    let mut states = Vec::new();
    for seq in 1..=20 {
        command(&mut ws, seq, [50.0, -3.0, 1e9]).await;
        states.extend(states_for(&mut ws, 0.05).await);
    }
    assert!(!states.is_empty());
    for s in &states {
        assert!(Vec3::from(s.u_des).norm() <= v_max + 1e-9);
        assert!(s.u_applied.iter().all(|c| c.abs() <= u_b + 1e-8), "{:?}", s.u_applied);
        assert!(s.vel.iter().all(|c| c.abs() <= u_b + 1e-8));
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn margin_follows_delay_change() {
    let server = start(task(vec![]), DelayModel::None).await;
    let mut ws = connect(&server).await;
    let before = states_for(&mut ws, 0.5).await.pop().unwrap().sigma_k;
    send(&mut ws, r#"{"type":"config","seq":1,"delay":{"kind":"constant","d_ms":200}}"#.into()).await;
    // 30 RTT samples at one per control tick take about 3 s plus the round trip.
    let after = states_for(&mut ws, 4.0).await.pop().unwrap();
    assert!(before < 0.05, "{before}");
    // Both legs are delayed, so the round trip is 0.4 s.
    let expected = 0.87 * 0.4;
    assert!((after.sigma_k - expected).abs() < 0.03, "{}", after.sigma_k);
    assert!((after.rtt_mean_ms - 400.0).abs() < 20.0, "{}", after.rtt_mean_ms);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_operator_steering_head_on_stays_clear() {
    let obstacle = Obstacle::new(Vec3::new(4.0, 0.0, 4.0), 0.5).unwrap();
    let server = start(
        task(vec![obstacle]),
        DelayModel::Gaussian { mean: 0.05, std: 0.02 },
    )
    .await;
    let mut ws = connect(&server).await;
    let d_min = SafetyParams::default().d_min;
    let mut min_seen = f64::INFINITY;
    let mut violations = None;
    let started = Instant::now();
    let mut seq = 0;
    while started.elapsed() < Duration::from_secs(6) {
        seq += 1;
        command(&mut ws, seq, [0.5, 0.0, 0.0]).await;
        let end = Instant::now() + Duration::from_millis(50);
        while Instant::now() < end {
            match next_msg(&mut ws).await {
                ServerMessage::State(s) => min_seen = min_seen.min(s.min_surf_dist.unwrap()),
                ServerMessage::Metrics(m) => violations = Some(m.dmin_violations),
                _ => {}
            }
        }
    }
    // The robot ran into the margin and stopped short of the obstacle.
    assert!(min_seen >= d_min, "{min_seen}");
    assert!(min_seen < 0.5, "never approached: {min_seen}");
    assert_eq!(violations, Some(0));
    server.shutdown().await;
}
