//! One live run: the engine thread, the ranking gate it blocks on, and the
//! snapshot the HTTP handlers read.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use iemoa_core::engine::{run, CriterionKind, RunConfig, RunObserver, RunTrace, TraceRow};
use iemoa_core::mdm::DecisionMaker;
use iemoa_core::problems::{ActiveMask, ObjectiveVector};
use iemoa_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Evolving,
    AwaitingRanking,
    Finished,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub objectives: ObjectiveVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub interaction: usize,
    pub candidates: Vec<Candidate>,
}

/// Everything the read endpoints need, guarded by one mutex.
#[derive(Debug)]
struct View {
    state: SessionState,
    pending: Option<Pending>,
    answer: Option<Vec<usize>>,
    completed_interactions: usize,
    mask: ActiveMask,
    scores: Option<Vec<f64>>,
    detected: Option<Vec<usize>>,
    generation: usize,
    rows: Vec<TraceRow>,
    error: Option<String>,
}

pub struct Session {
    pub id: String,
    pub config: RunConfig,
    view: Mutex<View>,
    gate: Condvar,
    cancelled: AtomicBool,
    idle_timeout: Option<Duration>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Status {
    pub id: String,
    pub state: SessionState,
    /// Interaction currently awaiting a ranking, or the last one answered.
    pub interaction: usize,
    pub completed_interactions: usize,
    pub interactions: usize,
    pub m: usize,
    pub n_exa: usize,
    pub generation: usize,
    pub mask: Vec<usize>,
    pub scores: Option<Vec<f64>>,
    pub detected: Option<Vec<usize>>,
    pub trace_rows: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidatesView {
    pub state: SessionState,
    pub interaction: Option<usize>,
    pub candidates: Vec<Candidate>,
    pub mask: Vec<usize>,
    pub scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceView {
    pub state: SessionState,
    pub aborted: bool,
    pub rows: Vec<TraceRow>,
}

/// Why a submission was refused.
#[derive(Debug, PartialEq)]
pub enum Rejection {
    WrongState(SessionState),
    StaleInteraction { expected: usize, got: usize },
    Malformed(String),
}

impl Session {
    /// Validates the configuration, builds the instance and starts the
    /// engine on its own thread.
    pub fn start(id: String, config: RunConfig, idle_timeout: Option<Duration>) -> Result<Arc<Session>> {
        config.validate()?;
        let instance = config.problem.build()?;
        let session = Arc::new(Session {
            id,
            view: Mutex::new(View {
                state: SessionState::Evolving,
                pending: None,
                answer: None,
                completed_interactions: 0,
                mask: config.start_mask()?,
                scores: None,
                detected: None,
                generation: 0,
                rows: Vec::new(),
                error: None,
            }),
            config,
            gate: Condvar::new(),
            cancelled: AtomicBool::new(false),
            idle_timeout,
        });
        let worker = Arc::clone(&session);
        thread::spawn(move || {
            let mut dm = Channel(Arc::clone(&worker));
            let mut obs = Channel(Arc::clone(&worker));
            let result = run(&worker.config, &instance, &mut dm, &mut obs);
            let mut v = worker.lock();
            v.pending = None;
            match result {
                Ok(trace) if !trace.aborted => v.state = SessionState::Finished,
                Ok(_) => {
                    v.state = SessionState::Aborted;
                    v.error.get_or_insert_with(|| "decision maker channel closed".into());
                }
                Err(e) => {
                    v.state = SessionState::Aborted;
                    v.error = Some(e.to_string());
                }
            }
            worker.gate.notify_all();
        });
        Ok(session)
    }

    fn lock(&self) -> MutexGuard<'_, View> {
        self.view.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn status(&self) -> Status {
        let v = self.lock();
        Status {
            id: self.id.clone(),
            state: v.state,
            interaction: v
                .pending
                .as_ref()
                .map(|p| p.interaction)
                .unwrap_or(v.completed_interactions),
            completed_interactions: v.completed_interactions,
            interactions: self.config.interactions,
            m: self.config.problem.m,
            n_exa: self.config.n_exa,
            generation: v.generation,
            mask: v.mask.indices().to_vec(),
            scores: v.scores.clone(),
            detected: v.detected.clone(),
            trace_rows: v.rows.len(),
            error: v.error.clone(),
        }
    }

    pub fn candidates(&self) -> CandidatesView {
        let v = self.lock();
        CandidatesView {
            state: v.state,
            interaction: v.pending.as_ref().map(|p| p.interaction),
            candidates: v.pending.as_ref().map(|p| p.candidates.clone()).unwrap_or_default(),
            mask: v.mask.indices().to_vec(),
            scores: v.scores.clone(),
        }
    }

    pub fn trace(&self) -> TraceView {
        let v = self.lock();
        TraceView {
            state: v.state,
            aborted: v.state == SessionState::Aborted,
            rows: v.rows.clone(),
        }
    }

    pub fn trace_csv(&self) -> String {
        let v = self.lock();
        RunTrace {
            rows: v.rows.clone(),
            aborted: v.state == SessionState::Aborted,
            models: Vec::new(),
        }
        .to_csv_string()
    }

    /// Accepts a best-first list of candidate ids for `interaction`.
    pub fn submit(&self, interaction: usize, order: &[String]) -> std::result::Result<Status, Rejection> {
        {
            let mut v = self.lock();
            let pending = match (&v.state, &v.pending) {
                (SessionState::AwaitingRanking, Some(p)) => p,
                (state, _) => return Err(Rejection::WrongState(*state)),
            };
            if pending.interaction != interaction {
                return Err(Rejection::StaleInteraction {
                    expected: pending.interaction,
                    got: interaction,
                });
            }
            let n = pending.candidates.len();
            if order.len() != n {
                return Err(Rejection::Malformed(format!("expected {n} ids, got {}", order.len())));
            }
            let mut seen = vec![false; n];
            let mut idx = Vec::with_capacity(n);
            for id in order {
                let k = pending
                    .candidates
                    .iter()
                    .position(|c| &c.id == id)
                    .ok_or_else(|| Rejection::Malformed(format!("unknown candidate id `{id}`")))?;
                if std::mem::replace(&mut seen[k], true) {
                    return Err(Rejection::Malformed(format!("duplicate candidate id `{id}`")));
                }
                idx.push(k);
            }
            v.answer = Some(idx);
            v.pending = None;
            v.completed_interactions += 1;
            v.state = SessionState::Evolving;
            self.gate.notify_all();
        }
        Ok(self.status())
    }

    /// Unblocks a waiting engine; the run ends with an aborted trace.
    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
        let _v = self.lock();
        self.gate.notify_all();
    }

    pub fn is_done(&self) -> bool {
        matches!(self.lock().state, SessionState::Finished | SessionState::Aborted)
    }
}

/// Engine-side handle: acts as the decision maker and as the observer.
struct Channel(Arc<Session>);

impl DecisionMaker for Channel {
    fn rank(&mut self, interaction: usize, candidates: &[ObjectiveVector]) -> Result<Vec<usize>> {
        let s = &self.0;
        let mut v = s.lock();
        v.answer = None;
        v.pending = Some(Pending {
            interaction,
            candidates: candidates
                .iter()
                .enumerate()
                .map(|(k, f)| Candidate {
                    id: format!("{interaction}-{k}"),
                    objectives: f.clone(),
                })
                .collect(),
        });
        v.state = SessionState::AwaitingRanking;
        s.gate.notify_all();
        let deadline = s.idle_timeout.map(|d| Instant::now() + d);
        loop {
            if s.cancelled.load(Ordering::SeqCst) {
                v.error = Some("cancelled".into());
                return Err(Error::ChannelClosed("session cancelled".into()));
            }
            if let Some(order) = v.answer.take() {
                return Ok(order);
            }
            v = match deadline {
                None => s.gate.wait(v).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        v.error = Some("idle timeout".into());
                        return Err(Error::ChannelClosed("idle timeout".into()));
                    }
                    s.gate.wait_timeout(v, d - now).unwrap_or_else(|e| e.into_inner()).0
                }
            };
        }
    }
}

impl RunObserver for Channel {
    fn on_generation(&mut self, generation: usize, _criterion: CriterionKind, mask: &ActiveMask) {
        let mut v = self.0.lock();
        v.generation = generation;
        if &v.mask != mask {
            v.mask = mask.clone();
        }
    }

    fn on_row(&mut self, row: &TraceRow) {
        let mut v = self.0.lock();
        v.mask = row.mask.clone();
        if row.scores.is_some() {
            v.scores = row.scores.clone();
            v.detected = row.detected.clone();
        }
        v.generation = row.generation;
        v.rows.push(row.clone());
    }
}
