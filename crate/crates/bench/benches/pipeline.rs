use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use gesture_relay::behavior::DelayLine;
use gesture_relay::bus::{topics, wire};
use gesture_relay::frame::HeadRotation;
use gesture_relay::gateway::Gateway;
use gesture_relay::harness::generate_schedule;
use gesture_relay::renderer::{default_taps, FirFilter, LogSink, Renderer, RendererConfig, RotationFilter, StateCell};
use gesture_relay::stats::{friedman, friedman_exact};
use gesture_relay::{Bus, BusMessage, Payload, RobotFrame, Telemetry, Transport};
use gesture_relay_bench::{capture_frames, likert_scores, raw_lines};

fn filters(c: &mut Criterion) {
    let mut fir = FirFilter::new(default_taps()).unwrap();
    let mut x = 0.0_f64;
    c.bench_function("fir/push", |b| {
        b.iter(|| {
            x += 0.1;
            black_box(fir.push(black_box(x.sin())))
        })
    });
    let mut rot = RotationFilter::new(default_taps()).unwrap();
    c.bench_function("fir/rotation_push", |b| {
        b.iter(|| black_box(rot.push(black_box(HeadRotation::new(1.0, 2.0, 3.0)))))
    });
}

fn delay_line(c: &mut Criterion) {
    let frames = capture_frames(600);
    let mut line = DelayLine::new(4_000, 1_000);
    for f in &frames {
        line.push(f.clone()).unwrap();
    }
    let mid = frames[300].t + 7;
    c.bench_function("delay_line/sample", |b| b.iter(|| black_box(line.sample(black_box(mid)))));
    c.bench_function("delay_line/fill_10s", |b| {
        b.iter_batched(
            || frames.clone(),
            |frames| {
                let mut line = DelayLine::new(4_000, 1_000);
                for f in frames {
                    line.push(f).unwrap();
                }
                line
            },
            BatchSize::SmallInput,
        )
    });
}

fn gateway(c: &mut Criterion) {
    let lines = raw_lines(60);
    let mut gw = Gateway::canonical(Arc::new(Telemetry::new()));
    let mut i = 0;
    c.bench_function("gateway/ingest", |b| {
        b.iter(|| {
            i = (i + 1) % lines.len();
            black_box(gw.ingest(lines[i].as_bytes()).ok())
        })
    });
}

fn bus(c: &mut Criterion) {
    let bus = Bus::new();
    let sub = bus.subscribe(topics::BEHAVIOR_FRAMES).unwrap();
    let frame = RobotFrame::neutral(0);
    c.bench_function("bus/publish_one_subscriber", |b| {
        b.iter(|| {
            bus.publish(topics::BEHAVIOR_FRAMES, 0, Payload::RobotFrame(frame.clone())).unwrap();
            black_box(sub.try_recv())
        })
    });
    let msg = BusMessage::new(topics::CAPTURE_FRAMES, 0, Payload::CaptureFrame(capture_frames(1).remove(0))).unwrap();
    let bytes = wire::encode(&msg).unwrap();
    c.bench_function("bus/encode_capture_frame", |b| b.iter(|| black_box(wire::encode(black_box(&msg)).unwrap())));
    c.bench_function("bus/decode_capture_frame", |b| {
        b.iter(|| black_box(wire::decode(black_box(&bytes)).unwrap()))
    });
}

fn renderer(c: &mut Criterion) {
    let cell = StateCell::new();
    let mut r = Renderer::new(cell.clone(), RendererConfig::default(), Box::new(LogSink), Arc::new(Telemetry::new())).unwrap();
    cell.update_behavior(RobotFrame::neutral(0));
    let mut now = 0;
    c.bench_function("renderer/tick", |b| {
        b.iter(|| {
            now += 8;
            black_box(r.tick(now))
        })
    });
}

fn stats(c: &mut Criterion) {
    let twelve = likert_scores(12);
    c.bench_function("stats/friedman_n12", |b| b.iter(|| black_box(friedman(black_box(&twelve)))));
    let six = likert_scores(6);
    c.bench_function("stats/friedman_exact_n6", |b| b.iter(|| black_box(friedman_exact(black_box(&six)).unwrap())));
}

fn schedule(c: &mut Criterion) {
    let mut group = c.benchmark_group("schedule");
    group.sample_size(20);
    let mut seed = 0;
    group.bench_function("generate_n12", |b| {
        b.iter(|| {
            seed += 1;
            black_box(generate_schedule(12, seed).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, filters, delay_line, gateway, bus, renderer, stats, schedule);
criterion_main!(benches);
