use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synproxy_core::cookie::{CookieCodec, CookieKey, MssTable};
use synproxy_core::engine::{
    translate_to_client, translate_to_server, Action, ActionList, DataDelayMode, DropReason,
    Engine, EngineConfig, Interface, Strategy,
};
use synproxy_core::packet::{serialize_segment, FlowKey, Segment, TcpFlags, TcpOptions};

const NOW: Duration = Duration::from_secs(1000);

fn client() -> FlowKey {
    FlowKey::new(
        Ipv4Addr::new(10, 0, 0, 1),
        4000,
        Ipv4Addr::new(10, 0, 0, 2),
        80,
    )
}

fn key() -> CookieKey {
    CookieKey::from_seed(42)
}

fn codec() -> CookieCodec {
    CookieCodec::new(key(), MssTable::default(), 1).unwrap()
}

fn engine(strategy: Strategy) -> Engine {
    Engine::new(EngineConfig::with_strategy(strategy), key()).unwrap()
}

fn engine_mode(mode: DataDelayMode) -> Engine {
    let cfg = EngineConfig {
        data_delay_mode: mode,
        ..EngineConfig::with_strategy(Strategy::SynCookie)
    };
    Engine::new(cfg, key()).unwrap()
}

fn syn(k: FlowKey, x: u32) -> Segment {
    Segment::new(k, TcpFlags::SYN, x, 0)
        .with_window(64_240)
        .with_options(TcpOptions::with_mss(1460))
}

fn ack(k: FlowKey, seq: u32, ack: u32) -> Segment {
    Segment::new(k, TcpFlags::ACK, seq, ack).with_window(64_240)
}

fn only_emit(out: &ActionList) -> (&Segment, Interface) {
    assert_eq!(out.len(), 1, "{out:?}");
    out.emissions().next().expect("one emission")
}

/// Runs the client handshake against the proxy; returns the cookie.
fn client_handshake(e: &mut Engine, x: u32) -> u32 {
    let out = e.process(syn(client(), x), Interface::Client, NOW);
    let (synack, _) = only_emit(&out);
    let y = synack.seq;
    let out = e.process(
        ack(client(), x.wrapping_add(1), y.wrapping_add(1)),
        Interface::Client,
        NOW,
    );
    assert_eq!(out.emission_count(), 1);
    y
}

fn server_synack(x: u32, z: u32) -> Segment {
    Segment::new(
        client().reverse(),
        TcpFlags::SYN | TcpFlags::ACK,
        z,
        x.wrapping_add(1),
    )
    .with_window(29_200)
    .with_options(TcpOptions::with_mss(1460))
}

#[test]
fn syncookie_syn_gets_stateless_synack() {
    let mut e = engine(Strategy::SynCookie);
    let out = e.process(syn(client(), 777), Interface::Client, NOW);
    let (s, iface) = only_emit(&out);
    assert_eq!(iface, Interface::Client);
    assert_eq!(s.key, client().reverse());
    assert_eq!(s.flags, TcpFlags::SYN | TcpFlags::ACK);
    assert_eq!(s.ack, 778);
    assert_eq!(s.window, 0);
    assert_eq!(s.options.mss(), Some(1460));
    assert_eq!(codec().encode(&client().reverse(), NOW, Some(1460)), s.seq);
    assert_eq!(e.conn_entries(), 0);

    let again = e.process(
        syn(client(), 777),
        Interface::Client,
        NOW + Duration::from_secs(1),
    );
    let a = serialize_segment(only_emit(&out).0).unwrap();
    let b = serialize_segment(only_emit(&again).0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn syn_flood_allocates_nothing() {
    for strategy in [
        Strategy::SynCookie,
        Strategy::AuthCookie,
        Strategy::AuthFull,
    ] {
        let mut e = engine(strategy);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20_000 {
            let k = FlowKey::new(
                Ipv4Addr::from(rng.gen::<u32>()),
                rng.gen(),
                Ipv4Addr::new(10, 0, 0, 2),
                80,
            );
            let out = e.process(syn(k, rng.gen()), Interface::Client, NOW);
            assert_eq!(out.emission_count(), 1);
        }
        assert_eq!(e.conn_entries(), 0);
        assert_eq!(e.whitelist_entries(), 0);
        assert_eq!(e.stats().synacks_sent, 20_000);
    }
}

#[test]
fn forged_ack_dropped_without_state() {
    let mut e = engine(Strategy::SynCookie);
    let y = codec().encode(&client().reverse(), NOW, Some(1460));
    let out = e.process(
        ack(client(), 1, (y ^ 1).wrapping_add(1)),
        Interface::Client,
        NOW,
    );
    assert_eq!(out.actions(), &[Action::Drop(DropReason::BadHash)]);
    let late = NOW + Duration::from_secs(200);
    let out = e.process(ack(client(), 1, y.wrapping_add(1)), Interface::Client, late);
    assert_eq!(out.actions(), &[Action::Drop(DropReason::StaleCookie)]);
    assert_eq!(e.conn_entries(), 0);
    assert_eq!(e.stats().emitted_to_server, 0);
}

#[test]
fn valid_ack_opens_server_connection() {
    let mut e = engine(Strategy::SynCookie);
    let x = 0x1000;
    let out = e.process(syn(client(), x), Interface::Client, NOW);
    let y = only_emit(&out).0.seq;
    let out = e.process(
        ack(client(), x + 1, y.wrapping_add(1)),
        Interface::Client,
        NOW,
    );
    let (s, iface) = only_emit(&out);
    assert_eq!(iface, Interface::Server);
    assert_eq!(s.key, client());
    assert_eq!(s.flags, TcpFlags::SYN);
    assert_eq!(s.seq, x);
    assert_eq!(s.options.mss(), Some(1460));
    assert_eq!(e.conn_entries(), 1);
}

#[test]
fn zero_window_splice_completion() {
    let mut e = engine(Strategy::SynCookie);
    let x = 0x1000;
    let y = client_handshake(&mut e, x);
    let z = 0x00ab_cdef;
    let out = e.process(server_synack(x, z), Interface::Server, NOW);
    assert_eq!(out.len(), 2);
    let mut em = out.emissions();
    let (a, ia) = em.next().unwrap();
    assert_eq!(ia, Interface::Server);
    assert_eq!((a.flags, a.seq, a.ack), (TcpFlags::ACK, x + 1, z + 1));
    let (r, ir) = em.next().unwrap();
    assert_eq!(ir, Interface::Client);
    assert_eq!(r.flags, TcpFlags::SYN | TcpFlags::ACK);
    assert_eq!((r.seq, r.ack, r.window), (y, x + 1, 29_200));

    let entry = e.shards()[0].conn_state().peek(&client()).unwrap().clone();
    assert!(entry.is_established());
    assert_eq!(entry.delta, z.wrapping_sub(y));

    // data both ways is translated
    let data = ack(client(), x + 1, y.wrapping_add(1)).with_payload(b"GET".to_vec());
    let out = e.process(data.clone(), Interface::Client, NOW);
    let (fwd, _) = only_emit(&out);
    assert_eq!(fwd.ack, z + 1);
    assert_eq!(fwd.payload, data.payload);
    assert_eq!(fwd.seq, data.seq);

    let reply =
        Segment::new(client().reverse(), TcpFlags::ACK, z + 1, x + 4).with_payload(b"200".to_vec());
    let out = e.process(reply, Interface::Server, NOW);
    let (back, iface) = only_emit(&out);
    assert_eq!(iface, Interface::Client);
    assert_eq!(back.seq, y.wrapping_add(1));
    assert_eq!(back.ack, x + 4);
}

#[test]
fn store_first_segment_mode() {
    let mut e = engine_mode(DataDelayMode::StoreFirstSegment);
    let x = 5;
    let out = e.process(syn(client(), x), Interface::Client, NOW);
    let synack = only_emit(&out).0;
    assert_eq!(synack.window, 65_535);
    let y = synack.seq;
    let first = ack(client(), x + 1, y.wrapping_add(1)).with_payload(vec![7; 100]);
    let out = e.process(first.clone(), Interface::Client, NOW);
    let (s, _) = only_emit(&out);
    assert_eq!((s.flags, s.seq), (TcpFlags::SYN, x));

    // a second early segment is not buffered
    let second = ack(client(), x + 101, y.wrapping_add(1)).with_payload(vec![8; 10]);
    let out = e.process(second, Interface::Client, NOW);
    assert_eq!(out.drop_reason(), Some(DropReason::AwaitingServer));

    let z = 90_000;
    let out = e.process(server_synack(x, z), Interface::Server, NOW);
    assert_eq!(out.emission_count(), 2);
    let stored = out.emissions().nth(1).unwrap().0;
    assert_eq!(stored.payload, first.payload);
    assert_eq!(stored.ack, z + 1);
    assert!(e.shards()[0]
        .conn_state()
        .peek(&client())
        .unwrap()
        .pending_data
        .is_none());
}

#[test]
fn store_first_segment_after_pure_ack() {
    let mut e = engine_mode(DataDelayMode::StoreFirstSegment);
    let x = 100;
    let y = client_handshake(&mut e, x);
    let data = ack(client(), x + 1, y.wrapping_add(1)).with_payload(vec![1; 20]);
    assert!(e.process(data, Interface::Client, NOW).is_empty());
    let out = e.process(server_synack(x, 1), Interface::Server, NOW);
    assert_eq!(out.emission_count(), 2);
}

#[test]
fn unexpected_synack_dropped() {
    let mut e = engine(Strategy::SynCookie);
    let out = e.process(server_synack(1, 2), Interface::Server, NOW);
    assert_eq!(out.actions(), &[Action::Drop(DropReason::NoMatchingSplice)]);
}

#[test]
fn translation_arithmetic() {
    let s = Segment::new(client().reverse(), TcpFlags::ACK, 5001, 77);
    assert_eq!(translate_to_client(s, 4000).seq, 1001);
    let c = Segment::new(client(), TcpFlags::ACK, 77, 1001);
    let t = translate_to_server(c.clone(), 4000);
    assert_eq!((t.seq, t.ack), (77, 5001));
    assert_eq!(t.payload, c.payload);
    assert_eq!(0x100u32.wrapping_sub(0xffff_ff00), 0x200);
    let w = Segment::new(client().reverse(), TcpFlags::ACK, 0x100, 0);
    assert_eq!(translate_to_client(w, 0x200).seq, 0xffff_ff00);
}

#[test]
fn close_and_reset_remove_entry() {
    let mut e = engine(Strategy::SynCookie);
    let (x, z) = (10, 20_000);
    let y = client_handshake(&mut e, x);
    e.process(server_synack(x, z), Interface::Server, NOW);
    let fa = TcpFlags::FIN | TcpFlags::ACK;
    let y1 = y.wrapping_add(1);
    e.process(
        Segment::new(client(), fa, x + 1, y1),
        Interface::Client,
        NOW,
    );
    e.process(
        Segment::new(client().reverse(), TcpFlags::ACK, z + 1, x + 2),
        Interface::Server,
        NOW,
    );
    assert_eq!(e.conn_entries(), 1);
    e.process(
        Segment::new(client().reverse(), fa, z + 1, x + 2),
        Interface::Server,
        NOW,
    );
    assert_eq!(e.conn_entries(), 1);
    let out = e.process(
        Segment::new(client(), TcpFlags::ACK, x + 2, y.wrapping_add(2)),
        Interface::Client,
        NOW,
    );
    assert_eq!(only_emit(&out).0.ack, z + 2);
    assert_eq!(e.conn_entries(), 0);

    let y = client_handshake(&mut e, x);
    e.process(server_synack(x, z), Interface::Server, NOW);
    let _ = y;
    let out = e.process(
        Segment::new(client(), TcpFlags::RST, x + 1, 0),
        Interface::Client,
        NOW,
    );
    assert_eq!(out.emission_count(), 1);
    assert_eq!(e.conn_entries(), 0);
}

#[test]
fn server_handshake_retransmits_then_gives_up() {
    let mut e = engine(Strategy::SynCookie);
    let x = 50;
    let y = client_handshake(&mut e, x);
    let mut retransmits = Vec::new();
    let mut t = NOW;
    while t < NOW + Duration::from_secs(20) {
        t += Duration::from_millis(100);
        for a in e.on_timer(t) {
            match a {
                Action::Emit { segment, iface } => retransmits.push((t - NOW, segment, iface)),
                Action::Drop(r) => assert_eq!(r, DropReason::HandshakeTimeout),
            }
        }
    }
    let times: Vec<_> = retransmits.iter().map(|r| r.0.as_millis()).collect();
    assert_eq!(times, vec![1000, 3000, 7000, 15_000]);
    for r in &retransmits[..3] {
        assert_eq!(
            (r.1.flags, r.1.seq, r.2),
            (TcpFlags::SYN, x, Interface::Server)
        );
    }
    let rst = &retransmits[3];
    assert_eq!(
        (rst.1.flags, rst.1.seq, rst.2),
        (TcpFlags::RST, y.wrapping_add(1), Interface::Client)
    );
    assert_eq!(e.conn_entries(), 0);
    assert_eq!(e.pending_handshakes(), 0);
}

#[test]
fn server_answer_cancels_retransmission() {
    let mut e = engine(Strategy::SynCookie);
    client_handshake(&mut e, 1);
    e.process(server_synack(1, 99), Interface::Server, NOW);
    assert!(e.on_timer(NOW + Duration::from_secs(30)).is_empty());
    assert_eq!(e.pending_handshakes(), 0);
}

#[test]
fn auth_cookie_handshake_then_passthrough() {
    let mut e = engine(Strategy::AuthCookie);
    let x = 9;
    let out = e.process(syn(client(), x), Interface::Client, NOW);
    let (s, _) = only_emit(&out);
    assert_eq!(s.seq, codec().encode(&client().reverse(), NOW, Some(1460)));
    assert_eq!(s.ack, x + 1);
    let y = s.seq;

    let forged = e.process(
        ack(client(), x + 1, y.wrapping_add(2)),
        Interface::Client,
        NOW,
    );
    assert_eq!(forged.drop_reason(), Some(DropReason::BadHash));
    assert_eq!(e.whitelist_entries(), 0);

    let out = e.process(
        ack(client(), x + 1, y.wrapping_add(1)),
        Interface::Client,
        NOW,
    );
    let (rst, iface) = only_emit(&out);
    assert_eq!(iface, Interface::Client);
    assert_eq!((rst.flags, rst.seq), (TcpFlags::RST, y.wrapping_add(1)));
    assert_eq!(e.whitelist_entries(), 1);

    // retry, from another port of the same source, goes straight through
    let mut retry_key = client();
    retry_key.src_port = 4001;
    let retry = syn(retry_key, 12345);
    let out = e.process(retry.clone(), Interface::Client, NOW);
    let (fwd, iface) = only_emit(&out);
    assert_eq!(iface, Interface::Server);
    let cfg = e.config().l2;
    assert_eq!(
        (fwd.eth_src, fwd.eth_dst),
        (cfg.proxy_server_port, cfg.server_neighbor)
    );
    let mut expect = retry;
    expect.eth_src = fwd.eth_src;
    expect.eth_dst = fwd.eth_dst;
    assert_eq!(fwd, &expect);
}

#[test]
fn auth_full_needs_no_hash_and_admits_any_ack() {
    let mut e = engine(Strategy::AuthFull);
    let out = e.process(syn(client(), 1), Interface::Client, NOW);
    assert_eq!(out.emission_count(), 1);
    assert_eq!(e.stats().hash_invocations, 0);
    let out = e.process(ack(client(), 2, 0xdead_beef), Interface::Client, NOW);
    assert_eq!(only_emit(&out).0.flags, TcpFlags::RST);
    assert_eq!(e.whitelist_entries(), 1);
    assert_eq!(e.stats().hash_invocations, 0);
}

#[test]
fn auth_checks_whitelist_once_per_segment() {
    let mut e = engine(Strategy::AuthCookie);
    let fin = Segment::new(client(), TcpFlags::FIN, 1, 0);
    let out = e.process(fin, Interface::Client, NOW);
    assert_eq!(out.drop_reason(), Some(DropReason::NotWhitelisted));
    for i in 0..10 {
        e.process(syn(client(), i), Interface::Client, NOW);
    }
    assert_eq!(e.stats().whitelist_lookups, 11);
    // server-side traffic is not checked
    e.process(server_synack(1, 1), Interface::Server, NOW);
    assert_eq!(e.stats().whitelist_lookups, 11);
}

#[test]
fn whitelist_aged_out_by_timer() {
    let mut e = engine(Strategy::AuthFull);
    // the first look at the clock anchors the sweep schedule
    e.on_timer(NOW);
    e.process(ack(client(), 2, 3), Interface::Client, NOW);
    assert_eq!(e.whitelist_entries(), 1);
    let p = e.config().whitelist_sweep_period;
    e.on_timer(NOW + p);
    assert_eq!(e.whitelist_entries(), 1);
    e.on_timer(NOW + 3 * p);
    assert_eq!(e.whitelist_entries(), 0);
}

#[test]
fn malformed_frame_dropped() {
    let mut e = engine(Strategy::SynCookie);
    let out = e.process_frame(&[0u8; 20], Interface::Client, NOW);
    assert_eq!(out.drop_reason(), Some(DropReason::Malformed));

    let cfg = EngineConfig {
        validate_checksums: true,
        ..Default::default()
    };
    let mut e = Engine::new(cfg, key()).unwrap();
    let mut frame = serialize_segment(&syn(client(), 1)).unwrap();
    assert_eq!(
        e.process_frame(&frame, Interface::Client, NOW)
            .emission_count(),
        1
    );
    let n = frame.len();
    frame[n - 1] ^= 0xff;
    let out = e.process_frame(&frame, Interface::Client, NOW);
    assert_eq!(out.drop_reason(), Some(DropReason::BadChecksum));
}

#[test]
fn attack_traffic_never_reaches_server_through_cookie_gates() {
    for strategy in [Strategy::SynCookie, Strategy::AuthCookie] {
        let mut e = engine(strategy);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..50_000u32 {
            let k = FlowKey::new(
                Ipv4Addr::from(rng.gen::<u32>()),
                rng.gen(),
                Ipv4Addr::new(10, 0, 0, 2),
                80,
            );
            let flags = match i % 4 {
                0 => TcpFlags::SYN,
                1 => TcpFlags::ACK,
                2 => TcpFlags::RST,
                _ => TcpFlags::ACK | TcpFlags::PSH,
            };
            let s =
                Segment::new(k, flags, rng.gen(), rng.gen()).with_payload(vec![0; i as usize % 3]);
            let out = e.process(s, Interface::Client, NOW);
            assert!(out.emission_count() <= 1);
            assert!(out.emissions().all(|(_, iface)| iface == Interface::Client));
        }
        assert_eq!(e.stats().emitted_to_server, 0, "{strategy}");
    }
}
