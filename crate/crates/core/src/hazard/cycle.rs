//! The slow reasoning loop.
//!
//! A cycle captures the freshest frame, runs both reasoning stages on it and
//! publishes the result `latency` seconds later. Until the next publication
//! every consumer reads the same snapshot, so segmentation at `t + k` keeps
//! using the hazard list inferred from the frame at `t`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use tracing::warn;

use super::{evaluate_emotion, reason_hazards, AnxietyAssessment, HazardBackend, HazardError, HazardReport, PromptSet, SceneImage};
use crate::costmap::Anxiety;

const TIME_EPS: f64 = 1e-9;

/// One completed reasoning cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardSnapshot {
    pub cycle: u64,
    /// Timestamp of the frame the cycle reasoned about.
    pub frame_timestamp: f64,
    /// Time the result became visible to consumers.
    pub published_at: f64,
    pub report: HazardReport,
    pub assessment: AnxietyAssessment,
}

impl HazardSnapshot {
    /// Hazard labels with scores, in reasoner order.
    pub fn hazards(&self) -> Vec<(String, Anxiety)> {
        self.report
            .hazardous_objects
            .iter()
            .filter_map(|h| self.assessment.scores.get(h).map(|&a| (h.clone(), a)))
            .collect()
    }
}

struct InFlight {
    cycle: u64,
    started_at: f64,
    frame_timestamp: f64,
    result: Result<(HazardReport, AnxietyAssessment), HazardError>,
}

/// Hazard cycle stepped by the simulation clock.
pub struct HazardCycle<B> {
    backend: B,
    prompts: PromptSet,
    latency: f64,
    in_flight: Option<InFlight>,
    latest: Option<Arc<HazardSnapshot>>,
    next_cycle: u64,
    failures: usize,
}

impl<B: HazardBackend> HazardCycle<B> {
    pub fn new(backend: B, prompts: PromptSet, latency: f64) -> Self {
        Self {
            backend,
            prompts,
            latency: latency.max(0.0),
            in_flight: None,
            latest: None,
            next_cycle: 0,
            failures: 0,
        }
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    pub fn latest(&self) -> Option<Arc<HazardSnapshot>> {
        self.latest.clone()
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    /// Advance to `now`. Publishes a finished cycle and starts the next one
    /// on `frame`. Returns the snapshot published during this call, if any.
    pub fn tick(&mut self, now: f64, frame: &SceneImage) -> Option<Arc<HazardSnapshot>> {
        let mut published = self.try_publish(now);
        if self.in_flight.is_none() {
            self.start(now, frame);
            // zero latency finishes within the same tick
            if let Some(p) = self.try_publish(now) {
                published = Some(p);
            }
        }
        published
    }

    fn start(&mut self, now: f64, frame: &SceneImage) {
        let result = run_stages(&mut self.backend, frame, &self.prompts);
        self.in_flight = Some(InFlight {
            cycle: self.next_cycle,
            started_at: now,
            frame_timestamp: frame.timestamp,
            result,
        });
        self.next_cycle += 1;
    }

    fn try_publish(&mut self, now: f64) -> Option<Arc<HazardSnapshot>> {
        let ready = self
            .in_flight
            .as_ref()
            .is_some_and(|f| now + TIME_EPS >= f.started_at + self.latency);
        if !ready {
            return None;
        }
        let job = self.in_flight.take()?;
        match job.result {
            Ok((report, assessment)) => {
                let snap = Arc::new(HazardSnapshot {
                    cycle: job.cycle,
                    frame_timestamp: job.frame_timestamp,
                    published_at: now,
                    report,
                    assessment,
                });
                self.latest = Some(snap.clone());
                Some(snap)
            }
            Err(e) => {
                self.failures += 1;
                warn!(cycle = job.cycle, error = %e, "hazard cycle failed; keeping previous assessment");
                None
            }
        }
    }
}

fn run_stages(
    backend: &mut dyn HazardBackend,
    frame: &SceneImage,
    prompts: &PromptSet,
) -> Result<(HazardReport, AnxietyAssessment), HazardError> {
    let report = reason_hazards(backend, frame, prompts)?;
    let assessment = evaluate_emotion(backend, &report.hazard_reasoning, &report.hazardous_objects, frame, prompts)?;
    Ok((report, assessment))
}

/// Shared "latest assessment" cell, replaced atomically by the producer.
#[derive(Debug, Clone, Default)]
pub struct LatestSlot(Arc<RwLock<Option<Arc<HazardSnapshot>>>>);

impl LatestSlot {
    pub fn get(&self) -> Option<Arc<HazardSnapshot>> {
        self.0.read().ok().and_then(|g| g.clone())
    }

    fn set(&self, snap: Arc<HazardSnapshot>) {
        if let Ok(mut g) = self.0.write() {
            *g = Some(snap);
        }
    }
}

/// Wall-clock mode: run cycles back to back on a worker thread until `stop`
/// is raised. `provider` returns the freshest frame.
pub fn spawn_concurrent<B, F>(
    mut backend: B,
    prompts: PromptSet,
    provider: F,
    stop: Arc<AtomicBool>,
) -> (LatestSlot, JoinHandle<()>)
where
    B: HazardBackend + 'static,
    F: Fn() -> Option<SceneImage> + Send + 'static,
{
    let slot = LatestSlot::default();
    let out = slot.clone();
    let clock = std::time::Instant::now();
    let handle = std::thread::spawn(move || {
        let mut cycle = 0;
        while !stop.load(Ordering::Relaxed) {
            let Some(frame) = provider() else {
                std::thread::yield_now();
                continue;
            };
            match run_stages(&mut backend, &frame, &prompts) {
                Ok((report, assessment)) => out.set(Arc::new(HazardSnapshot {
                    cycle,
                    frame_timestamp: frame.timestamp,
                    published_at: clock.elapsed().as_secs_f64(),
                    report,
                    assessment,
                })),
                Err(e) => warn!(cycle, error = %e, "hazard cycle failed; keeping previous assessment"),
            }
            cycle += 1;
        }
    });
    (slot, handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{FixtureTable, MockBackend, RawScore};

    fn frame(t: f64, labels: &[&str]) -> SceneImage {
        let names: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let ids = (0..labels.len() as u16).collect();
        SceneImage::with_semantics(t, labels.len(), 1, names, ids)
    }

    struct FlakyOnce {
        inner: MockBackend,
        fail_on: usize,
        calls: usize,
    }

    impl HazardBackend for FlakyOnce {
        fn hazard_report(&mut self, image: &SceneImage, prompts: &PromptSet) -> Result<HazardReport, HazardError> {
            self.calls += 1;
            if self.calls == self.fail_on {
                return Err(HazardError::Transport("connection reset".into()));
            }
            self.inner.hazard_report(image, prompts)
        }

        fn anxiety_scores(
            &mut self,
            reasoning: &str,
            hazards: &[String],
            image: &SceneImage,
            prompts: &PromptSet,
        ) -> Result<Vec<RawScore>, HazardError> {
            self.inner.anxiety_scores(reasoning, hazards, image, prompts)
        }
    }

    #[test]
    fn zero_latency_refreshes_every_tick() {
        let mut c = HazardCycle::new(MockBackend::new(FixtureTable::builtin()), PromptSet::default(), 0.0);
        for k in 0..5 {
            let t = k as f64 * 0.1;
            let snap = c.tick(t, &frame(t, &["door(closed)"])).expect("fresh each tick");
            assert_eq!(snap.cycle, k);
            assert_eq!(snap.frame_timestamp, t);
        }
    }

    #[test]
    fn latency_holds_previous_result() {
        let mut c = HazardCycle::new(MockBackend::new(FixtureTable::builtin()), PromptSet::default(), 4.0);
        let mut published = Vec::new();
        for k in 0..=100u32 {
            let t = k as f64 * 0.1;
            if let Some(s) = c.tick(t, &frame(t, &["door(closed)"])) {
                published.push((k, s.cycle, s.frame_timestamp));
            }
        }
        assert_eq!(published.len(), 2);
        assert_eq!(published[0], (40, 0, 0.0));
        assert_eq!(published[1].0, 80);
        assert!((published[1].2 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn failure_keeps_previous_assessment() {
        let backend = FlakyOnce {
            inner: MockBackend::new(FixtureTable::builtin()),
            fail_on: 2,
            calls: 0,
        };
        let mut c = HazardCycle::new(backend, PromptSet::default(), 1.0);
        let mut last_cycle = None;
        for k in 0..=40u32 {
            let t = k as f64 * 0.1;
            c.tick(t, &frame(t, &["door(closed)"]));
            if k >= 10 {
                let s = c.latest().expect("first cycle succeeded");
                assert!(s.hazards().iter().any(|(h, _)| h == "closed door"));
                last_cycle = Some(s.cycle);
            }
        }
        assert_eq!(c.failures(), 1);
        // cycles 0, 2, 3 succeed; cycle 1 failed
        assert_eq!(last_cycle, Some(3));
    }

    #[test]
    fn concurrent_mode_publishes() {
        let stop = Arc::new(AtomicBool::new(false));
        let (slot, handle) = spawn_concurrent(
            MockBackend::new(FixtureTable::builtin()),
            PromptSet::default(),
            || Some(frame(0.0, &["chair", "person(seated)"])),
            stop.clone(),
        );
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
        while slot.get().is_none() && std::time::Instant::now() < deadline {
            std::thread::yield_now();
        }
        stop.store(true, Ordering::Relaxed);
        handle.join().unwrap();
        let snap = slot.get().unwrap();
        assert_eq!(snap.hazards(), vec![("seated chair".to_string(), Anxiety::HIGH)]);
    }
}
