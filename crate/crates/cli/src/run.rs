use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tracing::info;
use voxbridge_bridge::driver::wait_for_subscribers;
use voxbridge_bridge::replay::replay_to_hub;
use voxbridge_bridge::{drive, serve, Hub, Pace, ServerOptions};
use voxbridge_core::mesh::{load_mesh, voxel_surface_mesh, MeshAsset};
use voxbridge_core::metrics::{self, MetricsError, SessionLog, TaskSpec};
use voxbridge_core::mission::{MissionRunner, MissionSummary, Script};
use voxbridge_core::occupancy::{VoxelCoord, VoxelSnapshot};
use voxbridge_core::protocol::{Topic, MAX_FRAME_BYTES};

use crate::config::MissionConfig;
use crate::{CliError, ReportFormat};

/// On-disk occupancy snapshot: the /occupancy_map payload layout with all voxels in one
/// document. A captured single-chunk payload is also accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub resolution: f64,
    #[serde(default)]
    pub revision: u64,
    /// Flattened `[ix, iy, iz, ...]`.
    pub voxels: Vec<i32>,
}

impl SnapshotFile {
    pub fn from_snapshot(s: &VoxelSnapshot) -> Self {
        Self {
            resolution: s.resolution,
            revision: s.revision,
            voxels: s.voxels.iter().flat_map(|v| v.as_array()).collect(),
        }
    }

    pub fn coords(&self) -> Vec<VoxelCoord> {
        self.voxels.chunks_exact(3).map(|c| VoxelCoord::new(c[0], c[1], c[2])).collect()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let file: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if !(file.resolution > 0.0) || !file.voxels.len().is_multiple_of(3) {
            return Err(CliError::Usage(format!(
                "{}: need a positive resolution and a voxel array of index triples",
                path.display()
            )));
        }
        Ok(file)
    }
}

fn runtime_err(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn write_snapshot(runner: &MissionRunner, path: &Path) -> Result<(), CliError> {
    let file = SnapshotFile::from_snapshot(&runner.sim().map().snapshot());
    let text = serde_json::to_string(&file).expect("serializable");
    std::fs::write(path, text).map_err(runtime_err("writing snapshot"))
}

fn load_script(cfg: &MissionConfig) -> Result<Script, CliError> {
    let script = match &cfg.script {
        Some(path) => Script::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => Script::reference(),
    };
    script.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(script)
}

fn load_mesh_asset(cfg: &MissionConfig) -> Result<Option<MeshAsset>, CliError> {
    let Some(path) = &cfg.mesh else { return Ok(None) };
    let loaded = load_mesh(path).map_err(|e| CliError::Usage(e.to_string()))?;
    if loaded.degenerate_dropped > 0 {
        tracing::warn!(dropped = loaded.degenerate_dropped, "degenerate mesh triangles skipped");
    }
    Ok(Some(loaded.asset))
}

fn finish_run(cfg: &MissionConfig, runner: &MissionRunner, hub: Option<&Hub>, snapshot: Option<&Path>) -> Result<(), CliError> {
    if let Some(path) = &cfg.session_log {
        runner
            .log()
            .save(path)
            .map_err(|e| CliError::Runtime(format!("writing session log {}: {e}", path.display())))?;
    }
    if let Some(path) = snapshot {
        write_snapshot(runner, path)?;
    }
    let mut summary: MissionSummary = runner.summary();
    if let Some(hub) = hub {
        summary.bandwidth.topics.insert(Topic::MeshMap.as_str().to_owned(), hub.mesh_stats());
    }
    println!("{summary}");
    Ok(())
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime_err("starting runtime"))
}

/// Flips the returned watch on Ctrl-C.
fn shutdown_on_signal() -> (watch::Sender<bool>, watch::Receiver<bool>) {
    let (tx, rx) = watch::channel(false);
    let signal_tx = tx.clone();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            info!("shutting down");
            let _ = signal_tx.send(true);
        }
    });
    (tx, rx)
}

async fn bind(cfg_bind: &str, port: u16) -> Result<TcpListener, CliError> {
    let listener = TcpListener::bind((cfg_bind, port))
        .await
        .map_err(|e| CliError::Runtime(format!("cannot listen on {cfg_bind}:{port}: {e}")))?;
    let addr = listener.local_addr().map_err(runtime_err("listener"))?;
    eprintln!("bridge listening on ws://{addr}");
    Ok(listener)
}

/// Stops the server and gives connections their drain window.
async fn stop_server(hub: &Hub, stop: &watch::Sender<bool>, server: tokio::task::JoinHandle<()>) {
    let _ = stop.send(true);
    let _ = server.await;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(1);
    while hub.connection_count() > 0 && tokio::time::Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

pub fn sim(cfg: MissionConfig, snapshot: Option<&Path>) -> Result<(), CliError> {
    let world = cfg.world_model()?;
    let script = load_script(&cfg)?;
    let mut runner = MissionRunner::new(world, cfg.sim_config(), cfg.runner_config(), script);
    let realtime = cfg.realtime.unwrap_or(false);
    let start = Instant::now();
    while runner.tick() {
        runner.drain_frames().for_each(drop);
        if realtime {
            let due = start + Duration::from_secs_f64(runner.time());
            std::thread::sleep(due.saturating_duration_since(Instant::now()));
        }
    }
    finish_run(&cfg, &runner, None, snapshot)?;
    println!("wall clock        {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn server_options(cfg: &MissionConfig) -> ServerOptions {
    ServerOptions {
        gzip: cfg.gzip,
        max_frame_bytes: MAX_FRAME_BYTES,
    }
}

pub fn bridge(cfg: MissionConfig) -> Result<(), CliError> {
    let world = cfg.world_model()?;
    let mesh = load_mesh_asset(&cfg)?;
    let mut runner_cfg = cfg.runner_config();
    runner_cfg.finish_when_settled = false;
    runner_cfg.max_duration = cfg.max_duration.unwrap_or(f64::INFINITY);
    let runner = MissionRunner::new(world, cfg.sim_config(), runner_cfg, Script::default());
    let pace = if cfg.realtime.unwrap_or(true) { Pace::Realtime } else { Pace::Fast };

    tokio_runtime()?.block_on(async {
        let listener = bind(&cfg.bind, cfg.port).await?;
        let (hub, targets) = Hub::new(mesh.as_ref());
        let (stop, stop_rx) = shutdown_on_signal();
        let server = tokio::spawn(serve(listener, hub.clone(), server_options(&cfg), stop_rx.clone()));
        let runner = drive(runner, hub.clone(), targets, pace, stop_rx).await;
        stop_server(&hub, &stop, server).await;
        finish_run(&cfg, &runner, Some(&hub), None)
    })
}

pub fn mission(cfg: MissionConfig, snapshot: Option<&Path>, wait_clients: usize, linger: bool) -> Result<(), CliError> {
    let world = cfg.world_model()?;
    let script = load_script(&cfg)?;
    let mesh = load_mesh_asset(&cfg)?;
    let runner = MissionRunner::new(world, cfg.sim_config(), cfg.runner_config(), script);
    let pace = if cfg.realtime.unwrap_or(true) { Pace::Realtime } else { Pace::Fast };

    tokio_runtime()?.block_on(async {
        let listener = bind(&cfg.bind, cfg.port).await?;
        let (hub, targets) = Hub::new(mesh.as_ref());
        let (stop, mut stop_rx) = shutdown_on_signal();
        let server = tokio::spawn(serve(listener, hub.clone(), server_options(&cfg), stop_rx.clone()));
        if wait_clients > 0 {
            eprintln!("waiting for {wait_clients} /odometry subscriber(s)");
            tokio::select! {
                _ = wait_for_subscribers(&hub, Topic::Odometry, wait_clients) => {}
                _ = stop_rx.changed() => {}
            }
        }
        let start = Instant::now();
        let runner = drive(runner, hub.clone(), targets, pace, stop_rx.clone()).await;
        let wall = start.elapsed().as_secs_f64();
        if linger && !*stop_rx.borrow() {
            eprintln!("script complete; serving until Ctrl-C");
            let _ = stop_rx.wait_for(|stopped| *stopped).await;
        }
        stop_server(&hub, &stop, server).await;
        finish_run(&cfg, &runner, Some(&hub), snapshot)?;
        println!("wall clock        {wall:.2} s");
        Ok(())
    })
}

fn load_session(path: &Path) -> Result<SessionLog, CliError> {
    SessionLog::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn metrics(session: &Path, tasks: Option<&Path>, format: ReportFormat) -> Result<(), CliError> {
    let log = load_session(session)?;
    let spec = tasks
        .map(|p| TaskSpec::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))))
        .transpose()?;
    let report = metrics::report(&log, spec.as_ref()).map_err(|e| match e {
        MetricsError::Io(_) | MetricsError::Parse { .. } => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    if matches!(format, ReportFormat::Text | ReportFormat::Both) {
        println!("{report}");
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    }
    Ok(())
}

pub fn replay(session: &Path, speed: f64, bind_addr: &str, port: u16, wait_clients: usize) -> Result<(), CliError> {
    if !(speed > 0.0) {
        return Err(CliError::Usage(format!("speed must be > 0, got {speed}")));
    }
    let log = load_session(session)?;
    tokio_runtime()?.block_on(async {
        let listener = bind(bind_addr, port).await?;
        let (hub, _targets) = Hub::new(None);
        let (stop, mut stop_rx) = shutdown_on_signal();
        let server = tokio::spawn(serve(listener, hub.clone(), ServerOptions::default(), stop_rx.clone()));
        if wait_clients > 0 {
            tokio::select! {
                _ = async {
                    while hub.connection_count() < wait_clients {
                        tokio::time::sleep(Duration::from_millis(5)).await;
                    }
                } => {}
                _ = stop_rx.changed() => {}
            }
        }
        let sent = replay_to_hub(&log, speed, &hub, stop_rx.clone())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        stop_server(&hub, &stop, server).await;
        println!("replayed {sent} messages from {} events", log.len());
        Ok(())
    })
}

pub fn voxel_mesh(input: &Path, output: &Path, z_min: Option<f64>, z_max: Option<f64>) -> Result<(), CliError> {
    let file = SnapshotFile::load(input)?;
    let voxels = file.coords();
    let res = file.resolution;
    let lowest = voxels.iter().map(|v| v.iz).min().unwrap_or(0) as f64 * res;
    let highest = voxels.iter().map(|v| v.iz + 1).max().unwrap_or(1) as f64 * res;
    let mesh = voxel_surface_mesh(&voxels, res, z_min.unwrap_or(lowest), z_max.unwrap_or(highest));
    std::fs::write(output, mesh.to_ply()).map_err(runtime_err("writing mesh"))?;
    println!(
        "{} voxels -> {} vertices, {} triangles ({})",
        voxels.len(),
        mesh.vertices.len(),
        mesh.triangles.len(),
        output.display()
    );
    Ok(())
}
