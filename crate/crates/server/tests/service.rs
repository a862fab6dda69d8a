use std::time::Duration;

use habs_client::{Client, ClientError, LiveConnection};
use habs_core::api::StepRequest;
use habs_core::calib::trainer_points;
use habs_core::live::{Command, Sample, ServerMessage};
use habs_core::{run_closed_loop, CalibrationPoly, PlantConfig, Scenario};
use habs_server::{serve, LiveConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

const TICK: Duration = Duration::from_millis(10);

struct Running {
    client: Client,
    _stop: oneshot::Sender<()>,
}

async fn start(scenario: Scenario) -> Running {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = oneshot::channel();
    let cfg = LiveConfig::new(scenario).with_period(TICK);
    tokio::spawn(async move {
        serve(listener, cfg, async {
            let _ = stopped.await;
        })
        .await
        .unwrap();
    });
    Running {
        client: Client::new(&format!("http://{addr}")).unwrap(),
        _stop: stop,
    }
}

fn ladder() -> Scenario {
    Scenario {
        duration: 270.0,
        setpoints: vec![(0.0, 35.0), (90.0, 45.0), (180.0, 55.0)],
        ..Scenario::default()
    }
}

async fn next_sample(live: &mut LiveConnection) -> Sample {
    loop {
        match tokio::time::timeout(Duration::from_secs(5), live.next_message())
            .await
            .expect("stream stalled")
            .expect("stream closed")
            .unwrap()
        {
            ServerMessage::Sample(s) => return s,
            ServerMessage::Ack { .. } => {}
            ServerMessage::Error { message } => panic!("unexpected error: {message}"),
        }
    }
}

/// Reads until the command reply, returning samples seen before it.
async fn reply(live: &mut LiveConnection) -> (ServerMessage, Vec<Sample>) {
    let mut seen = Vec::new();
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), live.next_message())
            .await
            .expect("stream stalled")
            .expect("stream closed")
            .unwrap();
        match msg {
            ServerMessage::Sample(s) => seen.push(s),
            other => return (other, seen),
        }
    }
}

#[tokio::test]
async fn health_endpoint() {
    let srv = start(ladder()).await;
    let body = srv.client.health().await.unwrap();
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn calibrate_over_http() {
    let srv = start(ladder()).await;
    let resp = srv.client.calibrate(trainer_points()).await.unwrap();
    let t = CalibrationPoly::TRAINER;
    for (got, want) in [
        (resp.poly.c3, t.c3),
        (resp.poly.c2, t.c2),
        (resp.poly.c1, t.c1),
        (resp.poly.c0, t.c0),
    ] {
        assert!((got - want).abs() <= 1e-3 * want.abs(), "{got} vs {want}");
    }
    assert_eq!(resp.residuals.len(), 6);

    let err = srv
        .client
        .calibrate(trainer_points()[..3].to_vec())
        .await
        .unwrap_err();
    match err {
        ClientError::Api { status, message } => {
            assert_eq!(status, 422);
            assert!(message.contains("need ≥4 points"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn step_then_identify_recovers_plant() {
    let srv = start(ladder()).await;
    let mut records = Vec::new();
    for (u0, u1) in [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)] {
        let req = StepRequest {
            u0,
            u1,
            duration: 60.0,
            ts: 0.1,
            preset: "canonical".into(),
        };
        records.push(srv.client.step(&req).await.unwrap());
    }
    let model = srv.client.identify(records).await.unwrap();
    let cfg = PlantConfig::canonical();
    assert_eq!(model.regions.len(), 3);
    for (i, seg) in model.regions.iter().enumerate() {
        let (k, tau) = (cfg.region_gains[i], cfg.region_taus[i]);
        assert!(
            (seg.gain - k).abs() <= 0.01 * k,
            "region {i} gain {}",
            seg.gain
        );
        assert!(
            (seg.tau - tau).abs() <= 0.02 * tau,
            "region {i} tau {}",
            seg.tau
        );
    }

    let err = srv.client.identify(Vec::new()).await.unwrap_err();
    assert!(
        matches!(err, ClientError::Api { status: 422, .. }),
        "{err:?}"
    );
}

#[tokio::test]
async fn simulate_matches_in_process_run() {
    let srv = start(ladder()).await;
    let resp = srv.client.simulate(&ladder()).await.unwrap();
    let local = run_closed_loop(&ladder()).unwrap();
    assert_eq!(resp.csv, local.to_csv());
    assert_eq!(resp.summary, local.summary);
    assert!(resp
        .csv
        .starts_with("t,setpoint,T_internal,T_measured,V_measured,e,u_daq,u_plant,region\n"));
}

#[tokio::test]
async fn invalid_scenario_is_rejected() {
    let srv = start(ladder()).await;
    let bad = Scenario {
        duration: -1.0,
        ..Scenario::default()
    };
    let err = srv.client.simulate(&bad).await.unwrap_err();
    assert!(
        matches!(err, ClientError::Api { status: 422, .. }),
        "{err:?}"
    );
}

#[tokio::test]
async fn live_samples_follow_the_batch_log() {
    let srv = start(ladder()).await;
    let rows = run_closed_loop(&ladder()).unwrap().rows;
    let mut live = srv.client.live().await.unwrap();
    let mut prev: Option<Sample> = None;
    for _ in 0..150 {
        let s = next_sample(&mut live).await;
        let row = &rows[(s.seq - 1) as usize];
        assert_eq!(s.region, row.region_label(), "seq {}", s.seq);
        assert_eq!(s.temperature, row.temp_measured);
        assert_eq!(s.u, row.u_daq);
        if let Some(p) = &prev {
            assert_eq!(s.seq, p.seq + 1, "gap in the stream");
        }
        prev = Some(s);
    }
    live.close().await.unwrap();
}

#[tokio::test]
async fn live_commands_take_effect_within_three_ticks() {
    let srv = start(ladder()).await;
    let mut live = srv.client.live().await.unwrap();
    let start = next_sample(&mut live).await;

    live.send(&Command::SetSetpoint { value: 45.0 })
        .await
        .unwrap();
    let (ack, before) = reply(&mut live).await;
    assert_eq!(
        ack,
        ServerMessage::Ack {
            command: "set_setpoint".into()
        }
    );
    let acked_at = before.last().map_or(start.seq, |s| s.seq);
    let first = loop {
        let s = next_sample(&mut live).await;
        if s.setpoint == 45.0 {
            break s;
        }
    };
    assert!(
        first.seq <= acked_at + 3,
        "setpoint echoed at {} after ack at {acked_at}",
        first.seq
    );

    live.send(&Command::SetThrottle { value: 0.8 })
        .await
        .unwrap();
    let (ack, _) = reply(&mut live).await;
    assert!(matches!(ack, ServerMessage::Ack { .. }));
    let mut waited = 0;
    while next_sample(&mut live).await.throttle != 0.8 {
        waited += 1;
        assert!(waited <= 3, "throttle not echoed within 3 ticks");
    }
}

#[tokio::test]
async fn malformed_commands_get_error_replies() {
    let srv = start(ladder()).await;
    let mut live = srv.client.live().await.unwrap();
    let first = next_sample(&mut live).await;

    for bad in [
        "not json",
        r#"{"type":"warp"}"#,
        r#"{"type":"set_throttle","value":0}"#,
    ] {
        live.send_raw(bad).await.unwrap();
        let (msg, _) = reply(&mut live).await;
        assert!(matches!(msg, ServerMessage::Error { .. }), "{bad}: {msg:?}");
    }
    let later = next_sample(&mut live).await;
    assert!(later.seq > first.seq);
    assert_eq!(later.throttle, 1.0);
}

#[tokio::test]
async fn pause_resume_and_reset() {
    let srv = start(ladder()).await;
    let mut live = srv.client.live().await.unwrap();
    next_sample(&mut live).await;

    live.send(&Command::Pause).await.unwrap();
    let (_, _) = reply(&mut live).await;
    // Drain the at most one sample produced before the pause landed.
    let quiet = tokio::time::timeout(TICK * 20, async {
        let mut n = 0;
        while let Some(Ok(ServerMessage::Sample(_))) = live.next_message().await {
            n += 1;
            if n > 2 {
                break;
            }
        }
        n
    })
    .await;
    assert!(quiet.is_err(), "samples kept flowing while paused");

    live.send(&Command::Reset).await.unwrap();
    live.send(&Command::Resume).await.unwrap();
    let (_, _) = reply(&mut live).await;
    let (_, _) = reply(&mut live).await;
    let s = next_sample(&mut live).await;
    assert_eq!(s.t, 0.0);
    assert!(s.seq > 1, "sequence restarted after reset");
}
