use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

use crate::media::Image;
use crate::network::{predict_frame, Prediction, ThreeStreamModel};
use crate::preprocess::{preprocess_pair, FrameInputs, PreprocessConfig};
use crate::{Error, Result};

use super::buffer::{ErroneousDetector, Event, FrameBuffer, FrameRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeConfig {
    /// Seconds of stream time between polls.
    pub poll_interval: f64,
    pub threshold_confidence: f32,
    /// Seconds without a confident poll before an erroneous action is reported.
    pub stipulated_time: f64,
    /// The buffer holds `ceil(fps * window_seconds)` records.
    pub window_seconds: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            poll_interval: 0.5,
            threshold_confidence: 0.5,
            stipulated_time: 2.0,
            window_seconds: 1.0,
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.poll_interval.is_finite() && self.poll_interval > 0.0) {
            return Err(Error::contract("poll_interval must be positive"));
        }
        if !(self.stipulated_time.is_finite() && self.stipulated_time >= self.poll_interval) {
            return Err(Error::contract("stipulated_time must be >= poll_interval"));
        }
        if !(0.0..1.0).contains(&self.threshold_confidence) {
            return Err(Error::contract("threshold_confidence must be in [0, 1)"));
        }
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(Error::contract("window_seconds must be positive"));
        }
        Ok(())
    }

    pub fn buffer_capacity(&self, fps: u32) -> usize {
        ((f64::from(fps) * self.window_seconds).ceil() as usize).max(1)
    }
}

/// Per-frame classifier used by the pipelines.
pub trait FrameClassifier: Sync {
    fn classify(&self, inputs: &FrameInputs) -> Result<Prediction>;
}

impl FrameClassifier for ThreeStreamModel<f32> {
    fn classify(&self, inputs: &FrameInputs) -> Result<Prediction> {
        predict_frame(self, inputs)
    }
}

impl<F: Fn(&FrameInputs) -> Result<Prediction> + Sync> FrameClassifier for F {
    fn classify(&self, inputs: &FrameInputs) -> Result<Prediction> {
        self(inputs)
    }
}

/// Buffer, poll schedule and erroneous-action state shared by both modes.
struct Poller {
    buffer: FrameBuffer,
    detector: ErroneousDetector,
    config: RuntimeConfig,
    polls: u64,
    events: Vec<Event>,
}

impl Poller {
    fn new(config: &RuntimeConfig, fps: u32) -> Result<Self> {
        config.validate()?;
        Ok(Poller {
            buffer: FrameBuffer::new(config.buffer_capacity(fps))?,
            detector: ErroneousDetector::new(config.stipulated_time),
            config: config.clone(),
            polls: 0,
            events: Vec::new(),
        })
    }

    fn push(&mut self, timestamp: f64, p: &Prediction) -> Result<()> {
        // Confidence is a softmax maximum, so it is positive unless it underflowed.
        let confidence = p.confidence.clamp(f32::MIN_POSITIVE, 1.0);
        self.buffer.push(FrameRecord::new(timestamp, p.class_id, confidence)?)?;
        Ok(())
    }

    fn poll_at(&mut self, t: f64) {
        let decision = self.buffer.poll(self.config.threshold_confidence, t);
        let erroneous = self.detector.update(&decision);
        self.events.push(Event::Poll(decision));
        if let Some(e) = erroneous {
            self.events.push(Event::Erroneous(e));
        }
    }

    fn next_poll_time(&self) -> f64 {
        // Multiply instead of accumulating so poll times do not drift.
        (self.polls + 1) as f64 * self.config.poll_interval
    }

    /// Runs every scheduled poll due by stream time `now`.
    fn advance(&mut self, now: f64) {
        while self.next_poll_time() <= now + 1e-9 {
            let t = self.next_poll_time();
            self.polls += 1;
            self.poll_at(t);
        }
    }
}

/// Offline run over a clip with virtual time: frame `i` arrives at `i / fps`
/// and the clock reads `(i + 1) / fps` once it has been handled. Each frame
/// from the second on is classified together with its predecessor. A final
/// poll follows the last frame. The log is a pure function of the inputs.
pub fn run_offline<I>(
    frames: I,
    fps: u32,
    classifier: &dyn FrameClassifier,
    preprocess: &PreprocessConfig,
    config: &RuntimeConfig,
) -> Result<Vec<Event>>
where
    I: IntoIterator<Item = Result<Image>>,
{
    if fps == 0 {
        return Err(Error::contract("fps must be positive"));
    }
    let mut poller = Poller::new(config, fps)?;
    let mut prev: Option<Image> = None;
    let mut clock = 0.0;
    for (i, frame) in frames.into_iter().enumerate() {
        let frame = frame?;
        let arrival = i as f64 / f64::from(fps);
        if let Some(p) = &prev {
            let inputs = preprocess_pair(p, &frame, preprocess)?.inputs();
            poller.push(arrival, &classifier.classify(&inputs)?)?;
        }
        prev = Some(frame);
        clock = (i + 1) as f64 / f64::from(fps);
        poller.advance(clock);
    }
    poller.poll_at(clock);
    Ok(poller.events)
}

/// Sends `item`, discarding the oldest queued item while the queue is full.
/// Returns how many items were discarded.
fn send_dropping_oldest<T>(tx: &Sender<T>, rx: &Receiver<T>, mut item: T) -> usize {
    let mut dropped = 0;
    loop {
        match tx.try_send(item) {
            Ok(()) => return dropped,
            Err(TrySendError::Full(back)) => {
                item = back;
                if rx.try_recv().is_ok() {
                    dropped += 1;
                }
            }
            Err(TrySendError::Disconnected(_)) => return dropped,
        }
    }
}

/// Live run on wall-clock time with three stages: the source is read at
/// `fps` into a bounded queue (oldest frames dropped when inference lags),
/// an inference thread classifies consecutive pairs, and a poller fires
/// every `poll_interval` seconds. Not deterministic; the number of dropped
/// frames is appended to the log.
pub fn run_live<I>(
    frames: I,
    fps: u32,
    classifier: &dyn FrameClassifier,
    preprocess: &PreprocessConfig,
    config: &RuntimeConfig,
    queue_capacity: usize,
) -> Result<Vec<Event>>
where
    I: IntoIterator<Item = Result<Image>>,
    I::IntoIter: Send,
{
    if fps == 0 || queue_capacity == 0 {
        return Err(Error::contract("fps and queue capacity must be positive"));
    }
    let poller = Mutex::new(Poller::new(config, fps)?);
    let (tx, rx) = bounded::<(f64, Image)>(queue_capacity);
    let dropped = AtomicUsize::new(0);
    let done = AtomicBool::new(false);
    let start = Instant::now();
    let period = Duration::from_secs_f64(1.0 / f64::from(fps));
    let frames = frames.into_iter();

    let result: Result<()> = thread::scope(|s| {
        let drop_rx = rx.clone();
        let (dropped, done, poller) = (&dropped, &done, &poller);
        let ingest = s.spawn(move || -> Result<()> {
            for (i, frame) in frames.enumerate() {
                let due = start + period * i as u32;
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
                let n = send_dropping_oldest(&tx, &drop_rx, (start.elapsed().as_secs_f64(), frame?));
                dropped.fetch_add(n, Ordering::Relaxed);
            }
            Ok(())
        });
        let infer = s.spawn(move || -> Result<()> {
            let mut prev: Option<Image> = None;
            let result = (|| {
                for (arrival, frame) in rx.iter() {
                    if let Some(p) = &prev {
                        let inputs = preprocess_pair(p, &frame, preprocess)?.inputs();
                        let pred = classifier.classify(&inputs)?;
                        poller.lock().expect("poller lock").push(arrival, &pred)?;
                    }
                    prev = Some(frame);
                }
                Ok(())
            })();
            done.store(true, Ordering::Release);
            result
        });
        let poll_period = Duration::from_secs_f64(config.poll_interval);
        let mut k = 1u32;
        while !done.load(Ordering::Acquire) {
            let due = start + poll_period * k;
            match due.checked_duration_since(Instant::now()) {
                Some(wait) => thread::sleep(wait.min(Duration::from_millis(20))),
                None => {
                    let mut p = poller.lock().expect("poller lock");
                    p.polls = u64::from(k);
                    p.poll_at(start.elapsed().as_secs_f64());
                    k += 1;
                }
            }
        }
        ingest.join().expect("ingest thread")?;
        infer.join().expect("inference thread")?;
        Ok(())
    });
    result?;
    let mut p = poller.into_inner().expect("poller lock");
    p.poll_at(start.elapsed().as_secs_f64());
    p.events.push(Event::Dropped(dropped.into_inner()));
    Ok(p.events)
}
