//! Micro-edge runtime: binds raw sensor streams to the pipeline's
//! denoising and feature stages, publishes feature telemetry, assembles
//! per-pipeline 2D feature matrices, fuses them per HRC function, and
//! applies data-controller feedback from the cloud.
//!
//! Windows are time-aligned across pipelines: a frame at `t` belongs to
//! window `t / window_ms`, and a sensor's window closes when its first
//! frame of a later window arrives (or on `flush`). Fused grids carry the
//! canonical window end `(idx+1) * window_ms`; per-sensor feature vectors
//! keep their window's last frame timestamp.
//!
//! Per-frame and per-window failures are published as dead letters on
//! `edge/<cell>/errors` instead of halting the pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    frame_stream_features, frame_stream_moment_maps, fuse_features, Grid, MomentMaps,
    WindowFeatures,
};
use crate::prep::{self, BackgroundModel, StoredBackground};
use crate::transport::{
    Broker, Clock, ControllerMsg, ErrorMsg, FusedGridMsg, MessageKind, TelemetryMessage, Topic,
    TransportError,
};
use crate::types::{DenoisedFrame, PipelineId, RawFrame, SensorId, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdgeError {
    #[error("controller update names unknown pipeline index {0}")]
    UnknownPipeline(u32),
    #[error("no binding for pipeline {0:?}")]
    UnboundPipeline(PipelineId),
    #[error("invalid edge config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// The three HRC functions served by the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrcFunction {
    WorkerCounting,
    MotionDetection,
    CoPresence,
}

impl HrcFunction {
    pub const ALL: [HrcFunction; 3] = [
        HrcFunction::WorkerCounting,
        HrcFunction::MotionDetection,
        HrcFunction::CoPresence,
    ];

    /// Topic segment for this function.
    pub fn as_str(self) -> &'static str {
        match self {
            HrcFunction::WorkerCounting => "counting",
            HrcFunction::MotionDetection => "motion",
            HrcFunction::CoPresence => "copresence",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "counting" => Some(HrcFunction::WorkerCounting),
            "motion" => Some(HrcFunction::MotionDetection),
            "copresence" => Some(HrcFunction::CoPresence),
            _ => None,
        }
    }
}

/// Default pipeline subsets per function: counting uses the CSI array,
/// motion detection inside the operating space fuses radar + THz camera,
/// co-presence adds the IR arrays. The data controller can override these
/// at runtime.
pub fn select_pipelines(function: HrcFunction) -> BTreeSet<PipelineId> {
    match function {
        HrcFunction::WorkerCounting => [PipelineId::Csi].into_iter().collect(),
        HrcFunction::MotionDetection => [PipelineId::FmcwRadar, PipelineId::ThzCamera]
            .into_iter()
            .collect(),
        HrcFunction::CoPresence => [
            PipelineId::FmcwRadar,
            PipelineId::ThzCamera,
            PipelineId::IrArray,
        ]
        .into_iter()
        .collect(),
    }
}

/// Functions whose fused grids the edge emits to the cloud classifier.
/// Worker counting is training-free and consumes raw CSI captures instead.
pub const FUSED_FUNCTIONS: [HrcFunction; 2] =
    [HrcFunction::MotionDetection, HrcFunction::CoPresence];

/// Edge configuration document (JSON): cell id, window length, per-pipeline
/// sensor lists, background file path, optional broker address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub cell: String,
    pub window_ms: u64,
    /// Pipeline index (as string key) -> sensor ids.
    pub sensors: BTreeMap<String, Vec<u32>>,
    #[serde(default)]
    pub backgrounds: Option<String>,
    #[serde(default)]
    pub broker: Option<String>,
}

impl EdgeConfig {
    pub fn sensor_ids(&self) -> Result<BTreeMap<PipelineId, Vec<SensorId>>, EdgeError> {
        let mut out = BTreeMap::new();
        for (key, ks) in &self.sensors {
            let idx: u32 = key
                .parse()
                .map_err(|_| EdgeError::BadConfig(format!("pipeline key {key}")))?;
            let pipeline = PipelineId::from_index(idx)
                .map_err(|e| EdgeError::BadConfig(e.to_string()))?;
            let sensors = ks
                .iter()
                .map(|&k| SensorId::new(pipeline, k).map_err(|e| EdgeError::BadConfig(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            out.insert(pipeline, sensors);
        }
        Ok(out)
    }
}

/// A pipeline's runtime binding: its background models and sensor roster.
#[derive(Debug, Clone)]
pub struct PipelineBinding {
    pub pipeline: PipelineId,
    pub backgrounds: BTreeMap<SensorId, BackgroundModel>,
    pub sensors: Vec<SensorId>,
}

impl PipelineBinding {
    pub fn new(
        pipeline: PipelineId,
        sensors: Vec<SensorId>,
        backgrounds: BTreeMap<SensorId, BackgroundModel>,
    ) -> Result<Self, EdgeError> {
        for sensor in &sensors {
            if sensor.pipeline != pipeline {
                return Err(EdgeError::BadConfig(format!(
                    "sensor {sensor:?} does not belong to pipeline {pipeline:?}"
                )));
            }
            let Some(model) = backgrounds.get(sensor) else {
                return Err(EdgeError::BadConfig(format!(
                    "no background for sensor {sensor:?}"
                )));
            };
            if model.pipeline() != pipeline {
                return Err(EdgeError::BadConfig(format!(
                    "background kind {} does not match pipeline {pipeline:?}",
                    model.kind()
                )));
            }
        }
        Ok(PipelineBinding {
            pipeline,
            backgrounds,
            sensors,
        })
    }
}

struct SensorBuffer {
    window_idx: u64,
    frames: Vec<DenoisedFrame>,
    first_wall_ms: f64,
}

/// Events produced by one micro-edge while consuming raw frames.
#[derive(Debug, Clone, PartialEq)]
pub enum MicroEdgeEvent {
    Feature(crate::features::FeatureVector),
    /// A closed window whose scalar summary had no variance.
    Degenerate {
        sensor: SensorId,
        window_end: Timestamp,
    },
    /// A closed window with too few frames for moments.
    WindowTooShort {
        sensor: SensorId,
        window_idx: u64,
        frames: usize,
    },
    /// Per-element moment maps of a closed window (fusion input).
    Maps {
        window_idx: u64,
        maps: MomentMaps,
        first_wall_ms: f64,
    },
    PrepError {
        sensor: SensorId,
        at: Timestamp,
        error: String,
    },
}

/// Per-pipeline processing stage: denoise each frame, window per sensor,
/// emit feature vectors and moment maps when windows close.
pub struct MicroEdge {
    binding: PipelineBinding,
    window_ms: u64,
    buffers: BTreeMap<SensorId, SensorBuffer>,
}

impl MicroEdge {
    pub fn new(binding: PipelineBinding, window_ms: u64) -> Result<Self, EdgeError> {
        if window_ms == 0 {
            return Err(EdgeError::BadConfig("window_ms must be positive".into()));
        }
        Ok(MicroEdge {
            binding,
            window_ms,
            buffers: BTreeMap::new(),
        })
    }

    pub fn pipeline(&self) -> PipelineId {
        self.binding.pipeline
    }

    fn denoise(&self, frame: &RawFrame) -> Result<DenoisedFrame, String> {
        let model = self
            .binding
            .backgrounds
            .get(&frame.sensor)
            .ok_or_else(|| format!("no background for sensor k={}", frame.sensor.k))?;
        let result = match model {
            BackgroundModel::Radar(bg) => prep::radar_denoise(frame, bg),
            BackgroundModel::Thz(bg) => prep::thz_denoise(frame, bg),
            BackgroundModel::Ir(bg) => prep::ir_denoise(frame, bg),
            BackgroundModel::Csi(cal) => prep::csi_isolate(frame, cal),
        };
        result.map_err(|e| e.to_string())
    }

    fn close_window(&mut self, sensor: SensorId) -> Vec<MicroEdgeEvent> {
        let Some(buffer) = self.buffers.remove(&sensor) else {
            return Vec::new();
        };
        let mut events = Vec::new();
        if buffer.frames.len() < 2 {
            events.push(MicroEdgeEvent::WindowTooShort {
                sensor,
                window_idx: buffer.window_idx,
                frames: buffer.frames.len(),
            });
            return events;
        }
        let window_len = buffer.frames.len();
        match frame_stream_features(&buffer.frames, window_len) {
            Ok(outcomes) => {
                for outcome in outcomes {
                    match outcome {
                        WindowFeatures::Features(f) => events.push(MicroEdgeEvent::Feature(f)),
                        WindowFeatures::Degenerate { sensor, window_end } => {
                            events.push(MicroEdgeEvent::Degenerate { sensor, window_end })
                        }
                    }
                }
            }
            Err(e) => events.push(MicroEdgeEvent::PrepError {
                sensor,
                at: buffer.frames.last().unwrap().at,
                error: e.to_string(),
            }),
        }
        match frame_stream_moment_maps(&buffer.frames, window_len) {
            Ok(maps) => {
                for m in maps {
                    events.push(MicroEdgeEvent::Maps {
                        window_idx: buffer.window_idx,
                        maps: m,
                        first_wall_ms: buffer.first_wall_ms,
                    });
                }
            }
            Err(e) => events.push(MicroEdgeEvent::PrepError {
                sensor,
                at: buffer.frames.last().unwrap().at,
                error: e.to_string(),
            }),
        }
        events
    }

    /// Consumes one raw frame; `wall_ms` is the pre-processing wall stamp
    /// used for latency tracing.
    pub fn ingest(&mut self, frame: &RawFrame, wall_ms: f64) -> Vec<MicroEdgeEvent> {
        let mut events = Vec::new();
        if frame.sensor.pipeline != self.binding.pipeline {
            events.push(MicroEdgeEvent::PrepError {
                sensor: frame.sensor,
                at: frame.at,
                error: format!(
                    "frame pipeline {:?} does not match binding {:?}",
                    frame.sensor.pipeline, self.binding.pipeline
                ),
            });
            return events;
        }
        let denoised = match self.denoise(frame) {
            Ok(d) => d,
            Err(error) => {
                events.push(MicroEdgeEvent::PrepError {
                    sensor: frame.sensor,
                    at: frame.at,
                    error,
                });
                return events;
            }
        };
        let idx = frame.at.millis() / self.window_ms;
        let needs_close = self
            .buffers
            .get(&frame.sensor)
            .map(|b| b.window_idx != idx)
            .unwrap_or(false);
        if needs_close {
            events.extend(self.close_window(frame.sensor));
        }
        self.buffers
            .entry(frame.sensor)
            .or_insert_with(|| SensorBuffer {
                window_idx: idx,
                frames: Vec::new(),
                first_wall_ms: wall_ms,
            })
            .frames
            .push(denoised);
        events
    }

    /// Closes every open window (end of stream).
    pub fn flush(&mut self) -> Vec<MicroEdgeEvent> {
        let sensors: Vec<SensorId> = self.buffers.keys().copied().collect();
        let mut events = Vec::new();
        for sensor in sensors {
            events.extend(self.close_window(sensor));
        }
        events
    }
}

fn pool_columns(values: &[f64], group: usize) -> Vec<f64> {
    if group <= 1 {
        return values.to_vec();
    }
    values
        .chunks(group)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn reshape_rows(values: &[f64], cols: usize) -> Vec<Vec<f64>> {
    values.chunks(cols).map(|c| c.to_vec()).collect()
}

/// Arranges one pipeline's per-sensor moment maps into the 2D feature
/// matrix handed to fusion:
/// - radar: per sensor, the four moment maps pooled from 512 bins to 32
///   range gates, stacked (sensors x 4 rows, 32 cols);
/// - THz camera: the native 32x32 mean map stacked over the deviation map
///   (64 x 32);
/// - IR arrays: per sensor a 2x2 tile of the four 8x8 maps (16x16),
///   sensors stacked vertically;
/// - CSI: the four maps over the beamformed series pooled to 32 columns.
pub fn pipeline_matrix(
    pipeline: PipelineId,
    maps: &BTreeMap<SensorId, MomentMaps>,
) -> Option<Grid> {
    if maps.is_empty() {
        return None;
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    match pipeline {
        PipelineId::FmcwRadar => {
            for m in maps.values() {
                rows.push(pool_columns(&m.mu, 16));
                rows.push(pool_columns(&m.sigma, 16));
                rows.push(pool_columns(&m.zeta, 16));
                rows.push(pool_columns(&m.kappa, 16));
            }
        }
        PipelineId::ThzCamera => {
            let m = maps.values().next()?;
            rows.extend(reshape_rows(&m.mu, 32));
            rows.extend(reshape_rows(&m.sigma, 32));
        }
        PipelineId::IrArray => {
            for m in maps.values() {
                let mu = reshape_rows(&m.mu, 8);
                let sigma = reshape_rows(&m.sigma, 8);
                let zeta = reshape_rows(&m.zeta, 8);
                let kappa = reshape_rows(&m.kappa, 8);
                for r in 0..8 {
                    let mut row = mu[r].clone();
                    row.extend(&sigma[r]);
                    rows.push(row);
                }
                for r in 0..8 {
                    let mut row = zeta[r].clone();
                    row.extend(&kappa[r]);
                    rows.push(row);
                }
            }
        }
        PipelineId::Csi => {
            let m = maps.values().next()?;
            let group = m.len().div_ceil(32);
            rows.push(pool_columns(&m.mu, group));
            rows.push(pool_columns(&m.sigma, group));
            rows.push(pool_columns(&m.zeta, group));
            rows.push(pool_columns(&m.kappa, group));
        }
    }
    Grid::from_rows(&rows).ok()
}

/// Data-controller update: replace the pipeline subset of one function.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerUpdate {
    pub function: HrcFunction,
    pub pipelines: BTreeSet<PipelineId>,
}

impl ControllerUpdate {
    pub fn from_msg(msg: &ControllerMsg) -> Result<Self, EdgeError> {
        let function = HrcFunction::from_str(&msg.function)
            .ok_or_else(|| EdgeError::BadConfig(format!("unknown function {}", msg.function)))?;
        let mut pipelines = BTreeSet::new();
        for &idx in &msg.pipelines {
            pipelines.insert(PipelineId::from_index(idx).map_err(|_| EdgeError::UnknownPipeline(idx))?);
        }
        Ok(ControllerUpdate {
            function,
            pipelines,
        })
    }
}

struct WindowAssembly {
    matrices: BTreeMap<PipelineId, Grid>,
    ingest_wall_ms: f64,
    /// Selection snapshot taken when the window entered the pool, so one
    /// grid never mixes selections.
    selections: BTreeMap<HrcFunction, BTreeSet<PipelineId>>,
    emitted: BTreeSet<HrcFunction>,
}

/// The edge node: one micro-edge per bound pipeline plus the fusion stage
/// and the controller state.
pub struct EdgeNode<C: Clock> {
    cell: String,
    window_ms: u64,
    clock: C,
    broker: Broker,
    micro: BTreeMap<PipelineId, MicroEdge>,
    selections: BTreeMap<HrcFunction, BTreeSet<PipelineId>>,
    /// Per-(pipeline, window) sensor maps awaiting pipeline completion.
    pending: BTreeMap<(PipelineId, u64), BTreeMap<SensorId, MomentMaps>>,
    pool: BTreeMap<u64, WindowAssembly>,
    fused_emitted: u64,
}

impl<C: Clock> EdgeNode<C> {
    pub fn new(
        cell: &str,
        window_ms: u64,
        bindings: Vec<PipelineBinding>,
        broker: Broker,
        clock: C,
    ) -> Result<Self, EdgeError> {
        let errors_topic = Topic::edge_errors(cell)?;
        broker.register(&errors_topic, MessageKind::Error)?;
        for function in FUSED_FUNCTIONS {
            broker.register(
                &Topic::edge_fused(cell, function.as_str())?,
                MessageKind::FusedGrid,
            )?;
        }
        let mut micro = BTreeMap::new();
        for binding in bindings {
            for sensor in &binding.sensors {
                broker.register(
                    &Topic::edge_sensor(cell, sensor.pipeline, sensor.k)?,
                    MessageKind::Feature,
                )?;
            }
            micro.insert(binding.pipeline, MicroEdge::new(binding, window_ms)?);
        }
        let selections = HrcFunction::ALL
            .into_iter()
            .map(|f| (f, select_pipelines(f)))
            .collect();
        Ok(EdgeNode {
            cell: cell.to_string(),
            window_ms,
            clock,
            broker,
            micro,
            selections,
            pending: BTreeMap::new(),
            pool: BTreeMap::new(),
            fused_emitted: 0,
        })
    }

    pub fn selection(&self, function: HrcFunction) -> &BTreeSet<PipelineId> {
        &self.selections[&function]
    }

    pub fn fused_emitted(&self) -> u64 {
        self.fused_emitted
    }

    /// Applies a controller update. Takes effect for windows entering the
    /// fusion pool from now on; in-flight windows keep their snapshot.
    pub fn apply_controller_update(&mut self, update: &ControllerUpdate) -> Result<(), EdgeError> {
        for pid in &update.pipelines {
            if !self.micro.contains_key(pid) {
                return Err(EdgeError::UnknownPipeline(pid.index()));
            }
        }
        self.selections.insert(update.function, update.pipelines.clone());
        Ok(())
    }

    fn publish_error(&self, msg: ErrorMsg) -> Result<(), EdgeError> {
        let topic = Topic::edge_errors(&self.cell)?;
        let envelope =
            TelemetryMessage::new(topic, self.clock.now_ms(), MessageKind::Error, &msg)?;
        self.broker.publish(envelope)?;
        Ok(())
    }

    fn handle_events(
        &mut self,
        pipeline: PipelineId,
        events: Vec<MicroEdgeEvent>,
    ) -> Result<(), EdgeError> {
        for event in events {
            match event {
                MicroEdgeEvent::Feature(f) => {
                    let topic = Topic::edge_sensor(&self.cell, f.sensor.pipeline, f.sensor.k)?;
                    let envelope = TelemetryMessage::new(
                        topic,
                        self.clock.now_ms(),
                        MessageKind::Feature,
                        &f,
                    )?;
                    self.broker.publish(envelope)?;
                }
                MicroEdgeEvent::Degenerate { sensor, window_end } => {
                    self.publish_error(ErrorMsg {
                        t_ms: window_end,
                        pipeline: Some(sensor.pipeline.index()),
                        sensor: Some(sensor.k),
                        error: "degenerate window: zero variance".into(),
                    })?;
                }
                MicroEdgeEvent::WindowTooShort {
                    sensor,
                    window_idx,
                    frames,
                } => {
                    self.publish_error(ErrorMsg {
                        t_ms: Timestamp((window_idx + 1) * self.window_ms),
                        pipeline: Some(sensor.pipeline.index()),
                        sensor: Some(sensor.k),
                        error: format!("window closed with {frames} frame(s)"),
                    })?;
                }
                MicroEdgeEvent::PrepError { sensor, at, error } => {
                    self.publish_error(ErrorMsg {
                        t_ms: at,
                        pipeline: Some(sensor.pipeline.index()),
                        sensor: Some(sensor.k),
                        error,
                    })?;
                }
                MicroEdgeEvent::Maps {
                    window_idx,
                    maps,
                    first_wall_ms,
                } => {
                    self.deliver_maps(pipeline, window_idx, maps, first_wall_ms)?;
                }
            }
        }
        Ok(())
    }

    fn deliver_maps(
        &mut self,
        pipeline: PipelineId,
        window_idx: u64,
        maps: MomentMaps,
        first_wall_ms: f64,
    ) -> Result<(), EdgeError> {
        // Collect this pipeline's maps for the window; the matrix is built
        // once all of the pipeline's sensors reported.
        let expected = self.micro[&pipeline].binding.sensors.len();
        let key = (pipeline, window_idx);
        let entry = self.pending.entry(key).or_default();
        entry.insert(maps.sensor, maps);
        if entry.len() < expected {
            return Ok(());
        }
        let sensor_maps = self.pending.remove(&key).expect("entry exists");
        let Some(matrix) = pipeline_matrix(pipeline, &sensor_maps) else {
            return Ok(());
        };
        let selections = self.selections.clone();
        let assembly = self.pool.entry(window_idx).or_insert_with(|| WindowAssembly {
            matrices: BTreeMap::new(),
            ingest_wall_ms: f64::INFINITY,
            selections,
            emitted: BTreeSet::new(),
        });
        assembly.matrices.insert(pipeline, matrix);
        assembly.ingest_wall_ms = assembly.ingest_wall_ms.min(first_wall_ms);
        self.try_fuse(window_idx)?;
        self.prune_pool();
        Ok(())
    }

    fn try_fuse(&mut self, window_idx: u64) -> Result<(), EdgeError> {
        let window_end = Timestamp((window_idx + 1) * self.window_ms);
        let Some(assembly) = self.pool.get_mut(&window_idx) else {
            return Ok(());
        };
        let mut fused = Vec::new();
        let mut failed = Vec::new();
        for function in FUSED_FUNCTIONS {
            if assembly.emitted.contains(&function) {
                continue;
            }
            let selection = assembly.selections[&function].clone();
            if selection.is_empty() || !selection.iter().all(|p| assembly.matrices.contains_key(p))
            {
                continue;
            }
            assembly.emitted.insert(function);
            match fuse_features(&assembly.matrices, &selection, window_end) {
                Ok(grid) => fused.push((function, grid, assembly.ingest_wall_ms)),
                Err(e) => failed.push((function, e.to_string())),
            }
        }
        for (function, grid, ingest_wall_ms) in fused {
            let payload = FusedGridMsg {
                function: function.as_str().to_string(),
                ingest_wall_ms,
                grid,
            };
            let topic = Topic::edge_fused(&self.cell, function.as_str())?;
            let envelope = TelemetryMessage::new(
                topic,
                self.clock.now_ms(),
                MessageKind::FusedGrid,
                &payload,
            )?;
            self.broker.publish(envelope)?;
            self.fused_emitted += 1;
        }
        for (function, error) in failed {
            self.publish_error(ErrorMsg {
                t_ms: window_end,
                pipeline: None,
                sensor: None,
                error: format!("fusion failed for {}: {error}", function.as_str()),
            })?;
        }
        Ok(())
    }

    fn prune_pool(&mut self) {
        // Keep a bounded pool: drop windows older than the newest by 8
        // once fully emitted, or by 32 unconditionally.
        let Some(&newest) = self.pool.keys().next_back() else {
            return;
        };
        self.pool.retain(|idx, assembly| {
            let age = newest.saturating_sub(*idx);
            if age > 32 {
                return false;
            }
            if age > 8 && assembly.emitted.len() == FUSED_FUNCTIONS.len() {
                return false;
            }
            true
        });
    }

    /// Feeds one raw frame through its pipeline's micro-edge.
    pub fn ingest_frame(&mut self, frame: &RawFrame) -> Result<(), EdgeError> {
        let pipeline = frame.sensor.pipeline;
        let wall = self.clock.now_ms();
        let Some(micro) = self.micro.get_mut(&pipeline) else {
            return Err(EdgeError::UnboundPipeline(pipeline));
        };
        let events = micro.ingest(frame, wall);
        self.handle_events(pipeline, events)
    }

    /// Closes all open windows (end of capture).
    pub fn flush(&mut self) -> Result<(), EdgeError> {
        let pipelines: Vec<PipelineId> = self.micro.keys().copied().collect();
        for pipeline in pipelines {
            let events = self.micro.get_mut(&pipeline).unwrap().flush();
            self.handle_events(pipeline, events)?;
        }
        Ok(())
    }

    /// Applies any controller messages queued on `cloud/<cell>/controller`.
    pub fn poll_controller(
        &mut self,
        subscription: &crate::transport::Subscription,
    ) -> Result<usize, EdgeError> {
        let mut applied = 0;
        while let Some(msg) = subscription.try_recv() {
            if msg.kind != MessageKind::Controller {
                continue;
            }
            let parsed: ControllerMsg = match msg.decode_payload() {
                Ok(p) => p,
                Err(_) => continue,
            };
            self.apply_controller_update(&ControllerUpdate::from_msg(&parsed)?)?;
            applied += 1;
        }
        Ok(applied)
    }
}

/// Builds pipeline bindings from a config and stored backgrounds.
pub fn bindings_from_config(
    config: &EdgeConfig,
    backgrounds: &[StoredBackground],
) -> Result<Vec<PipelineBinding>, EdgeError> {
    let by_sensor: BTreeMap<SensorId, BackgroundModel> = backgrounds
        .iter()
        .map(|s| (s.sensor, s.model.clone()))
        .collect();
    let mut out = Vec::new();
    for (pipeline, sensors) in config.sensor_ids()? {
        let mut models = BTreeMap::new();
        for sensor in &sensors {
            let model = by_sensor.get(sensor).ok_or_else(|| {
                EdgeError::BadConfig(format!(
                    "background file lacks pipeline {} sensor {}",
                    pipeline.index(),
                    sensor.k
                ))
            })?;
            models.insert(*sensor, model.clone());
        }
        out.push(PipelineBinding::new(pipeline, sensors, models)?);
    }
    Ok(out)
}

/// Replays captured raw frames through an edge node, driving the manual
/// clock from the capture stamps, then flushes trailing windows.
pub fn drive_capture(
    node: &mut EdgeNode<std::sync::Arc<crate::transport::ManualClock>>,
    clock: &crate::transport::ManualClock,
    messages: &[TelemetryMessage],
) -> Result<usize, EdgeError> {
    let mut ingested = 0;
    for msg in messages {
        if msg.kind != MessageKind::RawFrame {
            continue;
        }
        let frame: RawFrame = match msg.decode_payload() {
            Ok(f) => f,
            Err(_) => continue,
        };
        clock.set_ms(msg.published_at_ms);
        node.ingest_frame(&frame)?;
        ingested += 1;
    }
    node.flush()?;
    Ok(ingested)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::IrBackground;
    use crate::transport::ManualClock;
    use std::sync::Arc;

    fn ir_binding() -> PipelineBinding {
        let sensor = SensorId::new(PipelineId::IrArray, 1).unwrap();
        let bg = BackgroundModel::Ir(IrBackground::new(vec![20.0; 64]).unwrap());
        PipelineBinding::new(PipelineId::IrArray, vec![sensor], [(sensor, bg)].into()).unwrap()
    }

    fn ir_frame(t: u64, values: Vec<f64>) -> RawFrame {
        RawFrame::new(
            SensorId::new(PipelineId::IrArray, 1).unwrap(),
            Timestamp(t),
            values,
        )
        .unwrap()
    }

    #[test]
    fn selection_defaults() {
        assert_eq!(
            select_pipelines(HrcFunction::WorkerCounting),
            [PipelineId::Csi].into_iter().collect()
        );
        assert_eq!(
            select_pipelines(HrcFunction::MotionDetection),
            [PipelineId::FmcwRadar, PipelineId::ThzCamera].into_iter().collect()
        );
        assert_eq!(
            select_pipelines(HrcFunction::CoPresence),
            [
                PipelineId::FmcwRadar,
                PipelineId::ThzCamera,
                PipelineId::IrArray
            ]
            .into_iter()
            .collect()
        );
    }

    #[test]
    fn micro_edge_empty_stream_no_output() {
        let mut edge = MicroEdge::new(ir_binding(), 1000).unwrap();
        assert!(edge.flush().is_empty());
    }

    #[test]
    fn micro_edge_constant_stream_dead_letters() {
        let mut edge = MicroEdge::new(ir_binding(), 100).unwrap();
        let mut events = Vec::new();
        for t in 0..20 {
            events.extend(edge.ingest(&ir_frame(t * 25, vec![20.0; 64]), t as f64));
        }
        events.extend(edge.flush());
        // Constant background-subtracted frames: zero variance everywhere.
        assert!(events
            .iter()
            .any(|e| matches!(e, MicroEdgeEvent::Degenerate { .. })));
        assert!(!events
            .iter()
            .any(|e| matches!(e, MicroEdgeEvent::Feature(_))));
    }

    #[test]
    fn micro_edge_matches_offline_oracle() {
        use rand::Rng;
        let mut rng = crate::types::make_rng(5);
        let frames: Vec<RawFrame> = (0..8)
            .map(|t| {
                ir_frame(
                    t * 100,
                    (0..64).map(|_| 20.0 + rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let mut edge = MicroEdge::new(ir_binding(), 800).unwrap();
        let mut events = Vec::new();
        for f in &frames {
            events.extend(edge.ingest(f, 0.0));
        }
        events.extend(edge.flush());
        let features: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                MicroEdgeEvent::Feature(f) => Some(f.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(features.len(), 1);

        // Offline oracle: denoise then window explicitly.
        let bg = IrBackground::new(vec![20.0; 64]).unwrap();
        let denoised: Vec<DenoisedFrame> =
            frames.iter().map(|f| prep::ir_denoise(f, &bg).unwrap()).collect();
        let offline = frame_stream_features(&denoised, 8).unwrap();
        match &offline[0] {
            WindowFeatures::Features(expect) => assert_eq!(&features[0], expect),
            other => panic!("oracle degenerate? {other:?}"),
        }
    }

    #[test]
    fn controller_update_changes_next_grid_channels() {
        let broker = Broker::new();
        let clock = ManualClock::new();
        // Bind radar(1 sensor), thz, ir with trivial backgrounds.
        let radar_sensor = SensorId::new(PipelineId::FmcwRadar, 1).unwrap();
        let radar_bg = BackgroundModel::Radar(
            crate::prep::RadarBackground::from_parts(
                vec![0.0; 512],
                nalgebra::DMatrix::identity(512, 512),
            )
            .unwrap(),
        );
        let thz_sensor = SensorId::new(PipelineId::ThzCamera, 1).unwrap();
        let thz_bg = BackgroundModel::Thz(
            crate::prep::ThzBackground::new(vec![0.5; 1024], vec![0.1; 1024]).unwrap(),
        );
        let ir_sensor = SensorId::new(PipelineId::IrArray, 1).unwrap();
        let ir_bg = BackgroundModel::Ir(IrBackground::new(vec![20.0; 64]).unwrap());
        let bindings = vec![
            PipelineBinding::new(
                PipelineId::FmcwRadar,
                vec![radar_sensor],
                [(radar_sensor, radar_bg)].into(),
            )
            .unwrap(),
            PipelineBinding::new(
                PipelineId::ThzCamera,
                vec![thz_sensor],
                [(thz_sensor, thz_bg)].into(),
            )
            .unwrap(),
            PipelineBinding::new(
                PipelineId::IrArray,
                vec![ir_sensor],
                [(ir_sensor, ir_bg)].into(),
            )
            .unwrap(),
        ];
        let mut node =
            EdgeNode::new("c1", 100, bindings, broker.clone(), clock.clone()).unwrap();
        let sub = broker.subscribe("edge/c1/fused/copresence").unwrap();

        use rand::Rng;
        let mut rng = crate::types::make_rng(9);
        let mut feed_window = |node: &mut EdgeNode<Arc<ManualClock>>, base: u64| {
            for t in 0..4u64 {
                let at = base + t * 25;
                let radar = RawFrame::new(
                    radar_sensor,
                    Timestamp(at),
                    (0..512).map(|_| rng.random_range(0.0..1.0)).collect(),
                )
                .unwrap();
                let thz = RawFrame::new(
                    thz_sensor,
                    Timestamp(at),
                    (0..1024).map(|_| rng.random_range(0.0..1.0)).collect(),
                )
                .unwrap();
                let ir = RawFrame::new(
                    ir_sensor,
                    Timestamp(at),
                    (0..64).map(|_| 20.0 + rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                node.ingest_frame(&radar).unwrap();
                node.ingest_frame(&thz).unwrap();
                node.ingest_frame(&ir).unwrap();
            }
        };
        // Window 0 with default selection {1,2,3}.
        feed_window(&mut node, 0);
        feed_window(&mut node, 100); // closes window 0
        let first = sub.recv_timeout(std::time::Duration::from_secs(1)).unwrap();
        let grid: FusedGridMsg = first.decode_payload().unwrap();
        assert_eq!(grid.grid.channels.len(), 3);

        // Update co-presence to {1,3}; the next emitted grid has 2 channels.
        let update = ControllerUpdate {
            function: HrcFunction::CoPresence,
            pipelines: [PipelineId::FmcwRadar, PipelineId::IrArray].into_iter().collect(),
        };
        node.apply_controller_update(&update).unwrap();
        feed_window(&mut node, 200); // closes window 1
        node.flush().unwrap(); // closes window 2
        let second = sub.recv_timeout(std::time::Duration::from_secs(1)).unwrap();
        let grid: FusedGridMsg = second.decode_payload().unwrap();
        assert_eq!(grid.grid.channels.len(), 2);

        // No-op update: selection unchanged, idempotent.
        let before = node.selection(HrcFunction::CoPresence).clone();
        node.apply_controller_update(&ControllerUpdate {
            function: HrcFunction::CoPresence,
            pipelines: before.clone(),
        })
        .unwrap();
        assert_eq!(node.selection(HrcFunction::CoPresence), &before);

        // Unknown pipeline rejected.
        let err = ControllerUpdate::from_msg(&ControllerMsg {
            function: "copresence".into(),
            pipelines: vec![9],
        })
        .unwrap_err();
        assert!(matches!(err, EdgeError::UnknownPipeline(9)));
    }
}
