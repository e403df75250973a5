use std::time::{Duration, Instant};

use mirto::client::{ClientError, ClientSession, SessionOptions};
use mirto::contracts::Blame;
use mirto::protocol::PinMode;
use mirto::transport::{Connection, TransportEndpoint};

fn session() -> (ClientSession, Connection) {
    let (client, device) = Connection::loopback_pair();
    (ClientSession::new(client, SessionOptions::default()), device)
}

fn wait_for(mut done: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while !done() {
        assert!(Instant::now() < deadline, "condition never held");
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn sent(device: &Connection) -> Vec<String> {
    let mut lines = Vec::new();
    while let Some(line) = device.recv_line(Duration::from_millis(20)).unwrap() {
        lines.push(line);
    }
    lines
}

#[test]
fn fresh_session_reads_zero() {
    let (s, _device) = session();
    assert_eq!(s.get_ir(0).unwrap(), 0);
    assert_eq!(s.get_count(1).unwrap(), 0);
    assert!(!s.left_bump() && !s.right_bump());
    assert!(s.last_event_at().is_none());
}

#[test]
fn open_rejects_unreachable_endpoint() {
    let endpoint = TransportEndpoint::parse("serial:/dev/does-not-exist-mirto").unwrap();
    assert!(mirto::client::open_session(&endpoint, SessionOptions::default()).is_err());
}

#[test]
fn ir_report_reaches_cache() {
    let (s, device) = session();
    device.send_line("@R,i,3,{0:50,1:0,2:0}").unwrap();
    wait_for(|| s.get_ir(0).unwrap() == 50);
    assert_eq!(s.ir_values(), [50, 0, 0]);
    assert!(s.last_event_at().is_some());
    assert!(matches!(s.get_ir(3), Err(ClientError::Usage(_))));
}

#[test]
fn analog_report_fills_pins() {
    let (s, device) = session();
    device.send_line("@I,a,3,{0:320,1:340,2:329}").unwrap();
    wait_for(|| s.cache().analog(2) == 329);
    let analog = s.cache().snapshot().analog;
    assert_eq!(analog[..4], [320, 340, 329, 0]);
}

#[test]
fn bump_report_sets_flags() {
    let (s, device) = session();
    device.send_line("@B,b,2,{0:1,1:0}").unwrap();
    wait_for(|| s.left_bump());
    assert!(!s.right_bump());
    device.send_line("@B,b,2,{0:1,1:1}").unwrap();
    wait_for(|| s.right_bump());
    assert!(s.left_bump());
}

#[test]
fn unknown_and_bad_events_leave_cache_alone() {
    let (s, device) = session();
    device.send_line("@R,i,1,{1:7}").unwrap();
    wait_for(|| s.get_ir(1).unwrap() == 7);
    let before = s.cache().snapshot();
    for line in ["!hello", "Z,z,1", "@I,a,1,{16:5}", "@R,i,x", "@E,e,1,{0:3}"] {
        device.send_line(line).unwrap();
    }
    wait_for(|| s.get_count(0).unwrap() == 3);
    let mut expected = before;
    expected.encoder[0] = 3;
    assert_eq!(s.cache().snapshot(), expected);
}

#[test]
fn reset_count_zeroes_then_follows_reports() {
    let (mut s, device) = session();
    device.send_line("@E,e,2,{0:40,1:-40}").unwrap();
    wait_for(|| s.get_count(0).unwrap() == 40);
    s.reset_count(0).unwrap();
    assert_eq!(s.get_count(0).unwrap(), 0);
    assert_eq!(s.get_count(1).unwrap(), -40);
    device.send_line("@E,e,1,{0:5}").unwrap();
    wait_for(|| s.get_count(0).unwrap() == 5);
    assert!(matches!(s.reset_count(2), Err(ClientError::Usage(_))));
    assert!(matches!(s.get_count(2), Err(ClientError::Usage(_))));
    assert_eq!(sent(&device), ["E,r,0"]);
}

#[test]
fn commands_on_the_wire() {
    let (mut s, device) = session();
    s.digital_write(11, 1).unwrap();
    s.digital_write(0, 0).unwrap();
    s.digital_write_all(&[11, 12, 13], 1).unwrap();
    s.digital_write_all(&[], 1).unwrap();
    s.digital_write_all(&[5, 5], 0).unwrap();
    s.set_pin_mode(4, PinMode::InputPullup).unwrap();
    s.set_motors(-115, 115).unwrap();
    s.stop_motors().unwrap();
    s.stop_motors().unwrap();
    s.enable_ir(100).unwrap();
    s.enable_bumpers(100).unwrap();
    s.enable_ir(0).unwrap();
    assert_eq!(
        sent(&device),
        [
            "I,d,11,1",
            "I,d,0,0",
            "I,d,11,1",
            "I,d,12,1",
            "I,d,13,1",
            "I,d,5,0",
            "I,d,5,0",
            "I,p,4,2",
            "M,m,-115,115",
            "M,m,0,0",
            "M,m,0,0",
            "R,A,100",
            "B,A,100",
            "R,A,0",
        ]
    );
}

#[test]
fn bad_arguments_send_nothing() {
    let (mut s, device) = session();
    match s.set_motors(300, 0) {
        Err(ClientError::Contract(v)) => {
            assert_eq!(v.blame, Blame::Caller);
            assert_eq!(v.guard, "setMotors");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.motor_powers(), (0, 0));
    assert!(matches!(s.enable_ir(-1), Err(ClientError::Usage(_))));
    assert!(matches!(s.enable_bumpers(70_000), Err(ClientError::Usage(_))));
    assert!(s.digital_write(16, 1).is_err());
    assert!(s.digital_write(3, 2).is_err());
    assert!(matches!(s.sleep(-1.0), Err(ClientError::Usage(_))));
    assert!(sent(&device).is_empty());
}

#[test]
fn lockstep_sleep_fails_when_device_leaves() {
    let (client, device) = Connection::loopback_pair();
    let options = SessionOptions {
        sync_timeout: Duration::from_millis(200),
        ..SessionOptions::lockstep(0.01)
    };
    let mut s = ClientSession::new(client, options);
    assert!(matches!(s.sleep(0.02), Err(ClientError::SyncTimeout(2))));
    assert_eq!(
        device.recv_line(Duration::from_secs(1)).unwrap().as_deref(),
        Some("T,s,2")
    );
    device.close();
    assert!(s.sleep(0.02).is_err());
}
