//! Subcommand bodies.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use gesture_relay::behavior::{BehaviorEngine, BehaviorService, TrackLibrary};
use gesture_relay::bus::tcp::{BusServer, RemoteBus};
use gesture_relay::config::Config;
use gesture_relay::gateway::{tcp as gateway_tcp, ChannelMapping, Gateway};
use gesture_relay::harness::{export_csv, generate_schedule, validate_schedule, ExperimentSchedule, SessionLog};
use gesture_relay::playback::{load_library, load_library_as, AudioSink, CommandSink, Player, PlaybackService, PromptLibrary, TimingSink, PROMPTS_PER_ACTOR};
use gesture_relay::renderer::{
    net_sink, record_sink, run_realtime, spawn_ingest, subscribe_inputs, LogSink, Renderer, RobotSink, SimSink, StateCell,
};
use gesture_relay::sim::{
    measure_copy_delay, replay, run_e2e, synthetic_library, write_prompt_library, DelayProbe, E2eConfig, Recorder,
    SynthProfile, SynthSource,
};
use gesture_relay::stats::{summarize, QuestionnaireTopics, SummaryOptions};
use gesture_relay::track::GestureTrack;
use gesture_relay::{Bus, ChannelSet, Clock, SystemClock, Telemetry, Transport};

use crate::cli::*;
use crate::control::{router, ControlState};
use crate::publish::spawn_publisher;

pub fn run(cli: Cli) -> Result<()> {
    let config = Config::resolve(cli.config.as_deref()).context("loading config")?;
    match cli.command {
        Command::Bus(a) => bus(&config, a),
        Command::Gateway(a) => gateway(&config, a),
        Command::Behavior(a) => behavior(&config, a),
        Command::Playback(a) => playback(&config, a),
        Command::Renderer(a) => renderer(&config, a),
        Command::Harness(a) => harness(&config, a),
        Command::Schedule(a) => schedule(a),
        Command::Analyze(a) => analyze(a),
        Command::Synth(a) => synth(a),
        Command::Record(a) => record(&config, a),
        Command::Replay(a) => replay_track(&config, a),
        Command::Prompts(a) => prompts(&config, a),
        Command::E2e(a) => e2e(a),
        Command::Delay(a) => delay(a),
    }
}

/// Set on Ctrl-C.
fn interrupt_flag() -> Result<Arc<AtomicBool>> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    ctrlc::set_handler(move || s.store(true, Ordering::Release)).context("installing Ctrl-C handler")?;
    Ok(stop)
}

fn bus_addr(config: &Config, target: &BusTarget) -> String {
    target.bus.clone().unwrap_or_else(|| format!("127.0.0.1:{}", config.bus.port))
}

fn connect(config: &Config, target: &BusTarget) -> Result<Arc<RemoteBus>> {
    let addr = bus_addr(config, target);
    let bus = RemoteBus::connect(&addr).with_context(|| format!("connecting to bus at {addr}"))?;
    log::info!("connected to bus at {addr}");
    Ok(Arc::new(bus))
}

fn clock() -> Arc<dyn Clock> {
    Arc::new(SystemClock)
}

fn wait(stop: &AtomicBool) {
    while !stop.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn bus(config: &Config, a: BusArgs) -> Result<()> {
    let stop = interrupt_flag()?;
    let listen = a.listen.unwrap_or_else(|| format!("0.0.0.0:{}", config.bus.port));
    let server = BusServer::start(&listen, Bus::new()).with_context(|| format!("binding {listen}"))?;
    log::info!("bus listening on {}", server.local_addr());
    wait(&stop);
    server.shutdown();
    Ok(())
}

fn gateway(config: &Config, a: GatewayArgs) -> Result<()> {
    let stop = interrupt_flag()?;
    let bus = connect(config, &a.bus)?;
    let telemetry = Arc::new(Telemetry::new());
    let mut gw = match &a.mapping {
        Some(p) => {
            let mapping = ChannelMapping::load(p).with_context(|| format!("loading {}", p.display()))?;
            Gateway::new(mapping, ChannelSet::canonical().clone(), telemetry.clone())?
        }
        None => Gateway::canonical(telemetry.clone()),
    };
    let port = a.listen.unwrap_or(config.capture.port);
    let listener = TcpListener::bind(("0.0.0.0", port)).with_context(|| format!("binding capture port {port}"))?;
    log::info!("capture gateway on port {port}");
    let publisher = spawn_publisher(bus.clone(), telemetry, clock(), stop.clone());
    gateway_tcp::serve(listener, &mut gw, bus.as_ref(), &SystemClock, &stop)?;
    publisher.join().ok();
    Ok(())
}

fn behavior(config: &Config, a: BehaviorArgs) -> Result<()> {
    let stop = interrupt_flag()?;
    let bus = connect(config, &a.bus)?;
    let tracks = match &a.tracks {
        Some(dir) => TrackLibrary::load_dir(dir).with_context(|| format!("loading tracks from {}", dir.display()))?,
        None => TrackLibrary::new(),
    };
    log::info!("{} natural track(s) loaded", tracks.ids().count());
    let telemetry = Arc::new(Telemetry::new());
    let engine = BehaviorEngine::new(tracks, telemetry.clone());
    let mut service = BehaviorService::new(engine, bus.clone())?;
    let publisher = spawn_publisher(bus, telemetry, clock(), stop.clone());
    while !stop.load(Ordering::Acquire) {
        service.poll_blocking(Duration::from_millis(50))?;
    }
    publisher.join().ok();
    Ok(())
}

fn lip_channels(config: &Config) -> Result<Vec<String>> {
    Ok(config.renderer_config()?.lip_channels)
}

fn playback(config: &Config, a: PlaybackArgs) -> Result<()> {
    let stop = interrupt_flag()?;
    let lips = lip_channels(config)?;
    let loaded = match &a.actor {
        Some(actor) => load_library_as(&a.library, actor, &lips),
        None => load_library(&a.library, &lips),
    }
    .map_err(|e| anyhow::anyhow!("{e}"))
    .with_context(|| format!("loading prompt library {}", a.library.display()))?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    log::info!("{} prompts for actor `{}`", loaded.library.len(), loaded.library.actor_id);
    let bus = connect(config, &a.bus)?;
    let sink: Box<dyn AudioSink> = match &a.player {
        Some(p) => Box::new(CommandSink::new(p.clone())),
        None => Box::new(TimingSink::new()),
    };
    let player = Player::new(Arc::new(loaded.library), bus.clone(), sink, a.seed);
    let mut service = PlaybackService::new(player, bus.as_ref())?;
    while !stop.load(Ordering::Acquire) {
        let now = SystemClock.now_ms();
        service.step(now)?;
        let next = service.player().next_deadline().map_or(5, |d| (d - SystemClock.now_ms()).clamp(0, 5));
        std::thread::sleep(Duration::from_millis(next as u64));
    }
    Ok(())
}

fn renderer(config: &Config, a: RendererArgs) -> Result<()> {
    let stop = interrupt_flag()?;
    let bus = connect(config, &a.bus)?;
    let clock = clock();
    let counted = SimSink::new(clock.clone());
    let sink: Box<dyn RobotSink> = match &a.sink {
        SinkSpec::Sim => Box::new(counted.clone()),
        SinkSpec::Log => Box::new(LogSink),
        SinkSpec::Record(p) => {
            Box::new(record_sink(p, clock.clone()).with_context(|| format!("creating {}", p.display()))?)
        }
        SinkSpec::Net(addr) => Box::new(net_sink(addr, clock.clone()).with_context(|| format!("connecting to {addr}"))?),
    };
    let telemetry = Arc::new(Telemetry::new());
    let mut renderer = Renderer::new(StateCell::new(), config.renderer_config()?, sink, telemetry.clone())?;
    let ingest = spawn_ingest(subscribe_inputs(bus.as_ref())?, renderer.cell().clone(), clock.clone(), stop.clone());
    let publisher = spawn_publisher(bus, telemetry, clock.clone(), stop.clone());
    log::info!("rendering to {}", a.sink);
    let jitter = run_realtime(&mut renderer, clock.as_ref(), &stop, a.ticks);
    stop.store(true, Ordering::Release);
    ingest.join().ok();
    publisher.join().ok();
    println!("{}", serde_json::to_string(&jitter)?);
    if a.sink == SinkSpec::Sim {
        println!("{} commands emitted", counted.len());
    }
    Ok(())
}

/// One library per actor: `<dir>/<actor_id>/`.
fn actor_libraries(dir: &Path, lips: &[String]) -> Result<Vec<Arc<PromptLibrary>>> {
    let mut subdirs: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut out = Vec::new();
    for d in subdirs {
        let loaded = load_library(&d, lips)
            .map_err(|e| anyhow::anyhow!("{e}"))
            .with_context(|| format!("loading prompt library {}", d.display()))?;
        for w in &loaded.warnings {
            log::warn!("{}: {w}", d.display());
        }
        out.push(Arc::new(loaded.library));
    }
    Ok(out)
}

fn harness(config: &Config, a: HarnessArgs) -> Result<()> {
    let stop = interrupt_flag()?;
    let text = fs::read_to_string(&a.schedule).with_context(|| format!("reading {}", a.schedule.display()))?;
    let schedule = Arc::new(ExperimentSchedule::from_json(&text).context("parsing schedule")?);
    let report = validate_schedule(&schedule);
    if !report.all_passed() {
        log::warn!("schedule fails checks: {:?}", report.failed());
    }
    let lips = lip_channels(config)?;
    let libraries = match &a.prompts {
        Some(dir) => actor_libraries(dir, &lips)?,
        None => {
            log::warn!("no --prompts given; using synthetic prompt libraries");
            schedule
                .actors
                .iter()
                .map(|actor| Arc::new(synthetic_library(&actor.id, PROMPTS_PER_ACTOR, 2, schedule.seed, &lips)))
                .collect()
        }
    };
    let bus: Arc<dyn Transport> = match &a.bus {
        Some(addr) => Arc::new(RemoteBus::connect(addr).with_context(|| format!("connecting to bus at {addr}"))?),
        None => {
            log::warn!("no --bus given; events stay on a private in-process bus");
            Arc::new(Bus::new())
        }
    };
    fs::create_dir_all(&a.logs).with_context(|| format!("creating {}", a.logs.display()))?;
    let state = ControlState::new(schedule, bus, clock(), libraries, Some(a.logs.clone()));
    let relay = state.spawn_bus_relay(stop.clone())?;
    let port = a.port.unwrap_or(config.control.port);
    let addr = format!("{}:{port}", a.host);

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding control port {addr}"))?;
        log::info!("control API on http://{}", listener.local_addr()?);
        let shutdown = {
            let stop = stop.clone();
            async move {
                while !stop.load(Ordering::Acquire) {
                    tokio::time::sleep(Duration::from_millis(100)).await;
                }
            }
        };
        axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
        anyhow::Ok(())
    })?;
    stop.store(true, Ordering::Release);
    relay.join().ok();
    Ok(())
}

fn schedule(a: ScheduleArgs) -> Result<()> {
    let schedule = match &a.check {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentSchedule::from_json(&text).context("parsing schedule")?
        }
        None => generate_schedule(a.participants, a.seed)?,
    };
    let report = validate_schedule(&schedule);
    eprint!("{report}");
    if a.check.is_none() {
        match &a.out {
            Some(p) => fs::write(p, schedule.to_json()).with_context(|| format!("writing {}", p.display()))?,
            None => println!("{}", schedule.to_json()),
        }
    }
    if !report.all_passed() {
        bail!("schedule fails {:?}", report.failed());
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let logs = SessionLog::load_dir(&a.logs).with_context(|| format!("loading logs from {}", a.logs.display()))?;
    if logs.is_empty() {
        bail!("no session logs in {}", a.logs.display());
    }
    let topics = match &a.topics {
        Some(p) => QuestionnaireTopics::load(p)?,
        None => QuestionnaireTopics::builtin(),
    };
    let table = summarize(&logs, &topics, SummaryOptions { m: a.m, exact: a.exact })?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    match a.out.as_str() {
        "-" => print!("{}", table.to_markdown()),
        out if out.ends_with(".csv") => fs::write(out, table.to_csv()).with_context(|| format!("writing {out}"))?,
        out if out.ends_with(".md") => fs::write(out, table.to_markdown()).with_context(|| format!("writing {out}"))?,
        out => bail!("--out must end in .md or .csv, got `{out}`"),
    }
    if let Some(p) = &a.rows {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        export_csv(&logs, &topics, BufWriter::new(f))?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let profile = match a.profile {
        ProfileKind::Neutral => SynthProfile::Neutral,
        ProfileKind::Sinusoid => SynthProfile::Sinusoid {
            freq_hz: a.freq,
            axis: a.axis,
            amplitude_deg: a.amplitude,
            channel: a.channel.clone(),
        },
        ProfileKind::Scripted => {
            let p = a.track.as_ref().context("--track is required for the scripted profile")?;
            SynthProfile::Scripted(Arc::new(GestureTrack::load(p).with_context(|| format!("loading {}", p.display()))?))
        }
    };
    let stop = interrupt_flag()?;
    if let Some(addr) = &a.connect {
        let t0 = SystemClock.now_ms();
        let source = SynthSource::new(profile, a.fps, a.duration, t0)?;
        let mut out = TcpStream::connect(addr).with_context(|| format!("connecting to gateway at {addr}"))?;
        out.set_nodelay(true)?;
        let start = Instant::now();
        let mut n = 0u64;
        for r in source {
            if stop.load(Ordering::Acquire) {
                break;
            }
            let due = start + Duration::from_millis((r.t - t0).max(0) as u64);
            if let Some(w) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(w);
            }
            out.write_all(r.to_line().as_bytes())?;
            n += 1;
        }
        log::info!("sent {n} records to {addr}");
        return Ok(());
    }
    let source = SynthSource::new(profile, a.fps, a.duration, 0)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for r in source {
        if stop.load(Ordering::Acquire) {
            break;
        }
        if let Err(e) = out.write_all(r.to_line().as_bytes()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(());
            }
            return Err(e.into());
        }
    }
    out.flush()?;
    Ok(())
}

fn record(config: &Config, a: RecordArgs) -> Result<()> {
    if !(a.duration > 0.0 && a.duration.is_finite()) {
        bail!("--duration must be a positive number of seconds");
    }
    let bus = connect(config, &a.bus)?;
    let mut rec = Recorder::new(bus.as_ref(), &a.topic)?;
    let n = rec.record_for(Duration::from_secs_f64(a.duration));
    let skipped = rec.skipped();
    let recording = rec.finish()?;
    if let Some(w) = &recording.warning {
        log::warn!("{w}");
    }
    recording.track.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("recorded {n} frames from `{}` ({skipped} out of order)", a.topic);
    Ok(())
}

fn replay_track(config: &Config, a: ReplayArgs) -> Result<()> {
    let track = GestureTrack::load(&a.track).with_context(|| format!("loading {}", a.track.display()))?;
    let bus = connect(config, &a.bus)?;
    let n = replay(&track, &a.topic, bus.as_ref(), SystemClock.now_ms(), !a.burst)?;
    if !bus.flush(Duration::from_secs(5)) {
        log::warn!("not every frame reached the bus");
    }
    eprintln!("replayed {n} frames on `{}`", a.topic);
    Ok(())
}

fn prompts(config: &Config, a: PromptsArgs) -> Result<()> {
    let lips = lip_channels(config)?;
    let n = write_prompt_library(&a.out, &a.actor, a.count, a.variants, a.seed, &lips)?;
    eprintln!("wrote {n} prompts for `{}` to {}", a.actor, a.out.display());
    Ok(())
}

fn e2e(a: E2eArgs) -> Result<()> {
    let cfg = E2eConfig {
        seed: a.seed,
        participants: a.participants,
        participant: a.participant,
        policy: a.policy,
        initial_ranking: a.ranking,
        prompts_per_actor: a.prompts_per_actor,
        ..E2eConfig::default()
    };
    let out = run_e2e(&cfg)?;
    out.write_dir(&a.out)?;
    for i in &out.log.interactions {
        println!(
            "interaction {} {:<8} actor {:<9} accepted {}",
            i.position, i.condition, i.actor_id, i.accepted_count
        );
    }
    println!(
        "{} commands over {} ms, written to {}",
        out.commands.len(),
        out.finished_at - out.started_at,
        a.out.display()
    );
    Ok(())
}

fn delay(a: DelayArgs) -> Result<()> {
    let probe = DelayProbe {
        freq_hz: a.freq,
        delay_s: a.delay,
        duration_s: a.duration,
        fps: a.fps,
        ..DelayProbe::default()
    };
    let m = measure_copy_delay(&probe)?;
    println!("servo peak      {} ms (filter {} ms)", m.servo_peak_ms, m.fir_delay_ms);
    println!("servo delay     {:.1} ms  r={:.5}", m.servo_delay_ms, m.servo_correlation);
    println!("blendshape      {} ms  r={:.5}", m.blendshape_delay_ms, m.blendshape_correlation);
    println!("commands        {} servo, {} blendshape", m.servo_commands, m.blendshape_commands);
    Ok(())
}
