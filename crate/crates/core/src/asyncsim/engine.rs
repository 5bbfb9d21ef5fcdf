use std::collections::BTreeSet;
use std::sync::Arc;

use crate::analysis::{MetricsLog, MetricsRow};
use crate::detection::{self, DetectionConfig};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::privacy::{self, AccountantState};
use crate::rng::{role, Stream};

use super::aggregate::{aggregate_aldp, UpdateMsg};
use super::events::{EventKind, EventQueue};
use super::timing::{build_profiles, NodeProfile};
use super::topk::select_topk;
use super::workload::{TrainContext, TrainStreams, Workload};
use super::{comm_efficiency, LocalPolicy, Mode, SimConfig};

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: MetricsLog,
    pub final_model: ParamVector,
    pub profiles: Vec<NodeProfile>,
}

enum Payload {
    Global {
        model: Arc<ParamVector>,
        version: u64,
        sent_at: f64,
    },
    Upload(UpdateMsg),
    Done,
}

struct Node {
    profile: NodeProfile,
    local: ParamVector,
    session_start: ParamVector,
    session_time: f64,
    base_version: u64,
    pending: Option<(Arc<ParamVector>, u64)>,
    residual: ParamVector,
    busy: bool,
    /// When the node's last upload reached the cloud while it sits idle.
    awaiting_since: Option<f64>,
    train_streams: TrainStreams,
    compute: Stream,
    uplink: Stream,
    downlink: Stream,
    ldp: Stream,
    accountant: AccountantState,
}

struct Totals {
    comm: f64,
    comp: f64,
    wait: f64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    workload: &'a dyn Workload,
    detection: &'a DetectionConfig,
    alpha: f64,
    refresh: bool,
    nodes: Vec<Node>,
    queue: EventQueue<Payload>,
    global: Arc<ParamVector>,
    version: u64,
    buffer: Vec<UpdateMsg>,
    totals: Totals,
    log: MetricsLog,
}

/// Run the event loop until `cfg.rounds` aggregation events have happened.
///
/// `malicious` only labels node profiles; poisoned data must already be in
/// the workload.
pub fn run_simulation(
    cfg: &SimConfig,
    workload: &dyn Workload,
    malicious: &[usize],
    detection: &DetectionConfig,
) -> Result<SimOutput> {
    cfg.validate()?;
    if cfg.detection {
        detection.validate()?;
    }
    if workload.num_nodes() != cfg.nodes {
        return Err(Error::domain(
            "sim.nodes",
            format!("workload has {} nodes, config asks for {}", workload.num_nodes(), cfg.nodes),
        ));
    }
    if let Some(&bad) = malicious.iter().find(|&&k| k >= cfg.nodes) {
        return Err(Error::domain("attack.malicious", format!("node {bad} does not exist")));
    }

    let profiles = build_profiles(&cfg.timing, cfg.nodes, malicious, cfg.seed);
    let init = workload.initial_model();
    let nodes = profiles
        .iter()
        .map(|p| {
            let k = p.node_id as u64;
            Node {
                profile: *p,
                local: init.clone(),
                session_start: init.clone(),
                session_time: 0.0,
                base_version: 0,
                pending: None,
                residual: init.zeros_like(),
                busy: false,
                awaiting_since: None,
                train_streams: TrainStreams::for_node(cfg.seed, p.node_id),
                compute: Stream::derive(cfg.seed, role::COMPUTE, k),
                uplink: Stream::derive(cfg.seed, role::UPLINK, k),
                downlink: Stream::derive(cfg.seed, role::DOWNLINK, k),
                ldp: Stream::derive(cfg.seed, role::LDP, k),
                accountant: AccountantState::new(cfg.nodes),
            }
        })
        .collect();

    let mut sim = Sim {
        cfg,
        workload,
        detection,
        alpha: cfg.effective_alpha(),
        refresh: cfg.mode == Mode::Sync || cfg.local_policy == LocalPolicy::Refresh,
        nodes,
        queue: EventQueue::new(),
        global: Arc::new(init),
        version: 0,
        buffer: Vec::new(),
        totals: Totals {
            comm: 0.0,
            comp: 0.0,
            wait: 0.0,
        },
        log: MetricsLog::new(workload.name(), cfg.seed),
    };
    sim.run()?;
    Ok(SimOutput {
        log: sim.log,
        final_model: Arc::unwrap_or_clone(sim.global),
        profiles,
    })
}

impl Sim<'_> {
    fn run(&mut self) -> Result<()> {
        self.push_row(0, "init", &[], &[], String::new(), true)?;
        for k in 0..self.cfg.nodes {
            self.send_global(k);
        }
        let mut events = 0u64;
        while let Some(ev) = self.queue.pop() {
            match (ev.kind, ev.payload) {
                (EventKind::DownlinkArrival, Payload::Global { model, version, sent_at }) => {
                    self.on_downlink(ev.node, model, version, sent_at)?
                }
                (EventKind::TrainDone, Payload::Done) => self.on_train_done(ev.node)?,
                (EventKind::UploadArrival, Payload::Upload(msg)) => {
                    self.on_upload(ev.node, msg);
                    if self.buffer.len() >= self.cfg.batch_size() {
                        events += 1;
                        self.aggregate(events)?;
                        if events as usize == self.cfg.rounds {
                            return Ok(());
                        }
                    }
                }
                _ => unreachable!("event kind and payload are always paired"),
            }
        }
        Err(Error::Config("event queue drained before the last aggregation".into()))
    }

    fn send_global(&mut self, k: usize) {
        let now = self.queue.now();
        let node = &mut self.nodes[k];
        let latency = node.profile.downlink.sample(&mut node.downlink);
        self.queue.schedule(
            now + latency,
            EventKind::DownlinkArrival,
            k,
            Payload::Global {
                model: Arc::clone(&self.global),
                version: self.version,
                sent_at: now,
            },
        );
    }

    fn on_downlink(&mut self, k: usize, model: Arc<ParamVector>, version: u64, sent_at: f64) -> Result<()> {
        let now = self.queue.now();
        self.totals.comm += now - sent_at;
        let node = &mut self.nodes[k];
        if node.busy {
            node.pending = Some((model, version));
            return Ok(());
        }
        if let Some(arrived) = node.awaiting_since.take() {
            self.totals.wait += (sent_at - arrived).max(0.0);
        }
        self.start_session(k, (*model).clone(), version)
    }

    fn start_session(&mut self, k: usize, start: ParamVector, version: u64) -> Result<()> {
        let now = self.queue.now();
        let ctx = TrainContext {
            train: self.cfg.train,
            batch_noise_std: (self.cfg.ldp && self.cfg.per_batch_noise).then(|| self.cfg.privacy.noise_std()),
        };
        let node = &mut self.nodes[k];
        node.local = self.workload.train(k, &start, &ctx, &mut node.train_streams)?;
        node.session_start = start;
        node.base_version = version;
        node.session_time = (0..ctx.train.local_epochs)
            .map(|_| node.profile.compute.sample(&mut node.compute))
            .sum();
        node.busy = true;
        self.queue.schedule(now + node.session_time, EventKind::TrainDone, k, Payload::Done);
        Ok(())
    }

    fn on_train_done(&mut self, k: usize) -> Result<()> {
        let now = self.queue.now();
        let cfg = self.cfg;
        let node = &mut self.nodes[k];
        self.totals.comp += node.session_time;
        node.busy = false;

        let mut delta = node.local.sub(&node.session_start)?;
        if cfg.ldp {
            delta = privacy::perturb(&privacy::clip(&delta, cfg.privacy.clip_norm), &cfg.privacy, &mut node.ldp)?;
            node.accountant = privacy::account(&node.accountant, &cfg.privacy, 1);
        }
        if cfg.topk_ratio < 1.0 {
            let (sent, rest) = select_topk(&delta, &node.residual, cfg.topk_ratio)?;
            delta = sent;
            node.residual = rest;
        }
        let msg = UpdateMsg {
            node_id: k,
            delta,
            base_version: node.base_version,
            send_time: now,
            local_epochs: cfg.train.local_epochs,
        };
        let latency = node.profile.uplink.sample(&mut node.uplink);
        self.queue.schedule(now + latency, EventKind::UploadArrival, k, Payload::Upload(msg));

        if !self.refresh {
            let (start, version) = match node.pending.take() {
                Some((model, version)) => ((*model).clone(), version),
                None => (node.local.clone(), node.base_version),
            };
            self.start_session(k, start, version)?;
        }
        Ok(())
    }

    fn on_upload(&mut self, k: usize, msg: UpdateMsg) {
        let now = self.queue.now();
        self.totals.comm += now - msg.send_time;
        let node = &mut self.nodes[k];
        if !node.busy {
            node.awaiting_since = Some(now);
        }
        self.buffer.push(msg);
    }

    fn aggregate(&mut self, event: u64) -> Result<()> {
        let msgs = std::mem::take(&mut self.buffer);
        let refs: Vec<&UpdateMsg> = msgs.iter().collect();
        for m in &msgs {
            debug_assert!(m.base_version <= self.version);
            *self
                .log
                .staleness_histogram
                .entry(self.version - m.base_version)
                .or_insert(0) += 1;
        }

        let screen = self.cfg.detection && event % self.detection.cadence as u64 == 0;
        let (kept, flagged) = if screen {
            let workload = self.workload;
            let score = |m: &ParamVector| {
                workload
                    .accuracy(m)?
                    .ok_or_else(|| Error::Config("detection needs a workload with a test set".into()))
            };
            let (report, keep) =
                detection::screen(event, &refs, &*self.global, self.alpha, self.detection, score)?;
            let flagged = report.flagged();
            self.log.detection_reports.push(report);
            let kept: Vec<&UpdateMsg> = refs.iter().zip(&keep).filter(|(_, k)| **k).map(|(m, _)| *m).collect();
            (kept, flagged)
        } else {
            (refs.clone(), Vec::new())
        };

        self.global = Arc::new(aggregate_aldp(&*self.global, &kept, self.alpha)?);
        self.version += 1;

        let targets: BTreeSet<usize> = match self.cfg.mode {
            Mode::Sync => (0..self.cfg.nodes).collect(),
            Mode::Async => msgs.iter().map(|m| m.node_id).collect(),
        };
        let flagged = flagged.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        let last = event as usize == self.cfg.rounds;
        let evaluate = last || event as usize % self.cfg.eval_every == 0;
        self.push_row(event, "aggregate", &msgs, &kept, flagged, evaluate)?;
        self.log.makespan = self.queue.now();
        if !last {
            for k in targets {
                self.send_global(k);
            }
        }
        Ok(())
    }

    fn push_row(
        &mut self,
        event: u64,
        kind: &str,
        msgs: &[UpdateMsg],
        kept: &[&UpdateMsg],
        flagged: String,
        evaluate: bool,
    ) -> Result<()> {
        let (accuracy, loss) = if evaluate {
            (self.workload.accuracy(&self.global)?, Some(self.workload.loss(&self.global)?))
        } else {
            (None, None)
        };
        let (eps, delta, warn) = self.nodes.iter().fold((0.0f64, 0.0f64, false), |acc, n| {
            (
                acc.0.max(n.accountant.total.0),
                acc.1.max(n.accountant.total.1),
                acc.2 || n.accountant.delta_warning,
            )
        });
        self.log.delta_warning |= warn;
        let t = &self.totals;
        self.log.rows.push(MetricsRow {
            event_index: event,
            sim_time: self.queue.now(),
            event_kind: kind.to_string(),
            node_id: match kept {
                [only] => Some(only.node_id),
                _ => None,
            },
            updates: kept.len(),
            version: self.version,
            global_accuracy: accuracy,
            global_loss: loss,
            kappa_cumulative: comm_efficiency(t.comm, t.comp + t.wait).ok(),
            comm_time_cum: t.comm,
            comp_time_cum: t.comp + t.wait,
            wait_time_cum: t.wait,
            staleness: msgs.iter().map(|m| self.version - 1 - m.base_version).max(),
            local_epochs: msgs.iter().map(|m| m.local_epochs).min(),
            epsilon_total: eps,
            delta_total: delta,
            flagged,
            asr: None,
        });
        Ok(())
    }
}
