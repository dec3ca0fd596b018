use std::collections::VecDeque;

use crate::frame::{lerp_frames, CaptureFrame};

/// Default retention beyond the delay itself.
pub const DEFAULT_MARGIN_MS: i64 = 1000;
/// Highest input rate the capacity bound is sized for.
pub const MAX_INPUT_RATE_HZ: f64 = 120.0;

/// Time-ordered buffer of recent capture frames, sampled at a fixed lag.
#[derive(Debug, Clone)]
pub struct DelayLine {
    frames: VecDeque<CaptureFrame>,
    retention_ms: i64,
    margin_ms: i64,
    capacity: usize,
    rejected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonMonotone {
    pub t: i64,
    pub newest: i64,
}

impl DelayLine {
    pub fn new(delay_ms: i64, margin_ms: i64) -> Self {
        let mut line = Self {
            frames: VecDeque::new(),
            retention_ms: 0,
            margin_ms,
            capacity: 1,
            rejected: 0,
        };
        line.set_delay(delay_ms);
        line
    }

    /// Grow or shrink retention to cover `delay_ms` plus the margin.
    pub fn set_delay(&mut self, delay_ms: i64) {
        self.retention_ms = delay_ms.max(0) + self.margin_ms;
        self.capacity = ((self.retention_ms as f64 / 1000.0) * MAX_INPUT_RATE_HZ).ceil() as usize + 2;
        self.evict();
    }

    pub fn push(&mut self, frame: CaptureFrame) -> Result<(), NonMonotone> {
        if let Some(newest) = self.frames.back() {
            if frame.t <= newest.t {
                self.rejected += 1;
                return Err(NonMonotone {
                    t: frame.t,
                    newest: newest.t,
                });
            }
        }
        self.frames.push_back(frame);
        self.evict();
        Ok(())
    }

    fn evict(&mut self) {
        let Some(newest) = self.frames.back().map(|f| f.t) else {
            return;
        };
        let horizon = newest - self.retention_ms;
        while self.frames.front().is_some_and(|f| f.t < horizon) || self.frames.len() > self.capacity {
            self.frames.pop_front();
        }
    }

    /// Delay the retention currently covers.
    pub fn delay_ms(&self) -> i64 {
        self.retention_ms - self.margin_ms
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn oldest(&self) -> Option<&CaptureFrame> {
        self.frames.front()
    }

    pub fn newest(&self) -> Option<&CaptureFrame> {
        self.frames.back()
    }

    /// Time covered by the buffer, newest minus oldest.
    pub fn span_ms(&self) -> i64 {
        match (self.frames.front(), self.frames.back()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }

    /// Interpolated input at `t`. `None` while the buffer does not reach back
    /// to `t`; the newest frame when `t` is past it.
    pub fn sample(&self, t: i64) -> Option<CaptureFrame> {
        let oldest = self.frames.front()?;
        if t < oldest.t {
            return None;
        }
        let idx = self.frames.partition_point(|f| f.t <= t);
        if idx >= self.frames.len() {
            let mut f = self.frames.back()?.clone();
            f.t = t;
            return Some(f);
        }
        let a = &self.frames[idx - 1];
        if a.t == t {
            return Some(a.clone());
        }
        lerp_frames(a, &self.frames[idx], t).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_onto_empty() {
        let mut line = DelayLine::new(4000, DEFAULT_MARGIN_MS);
        line.push(CaptureFrame::neutral(0, 0)).unwrap();
        assert_eq!(line.len(), 1);
    }

    #[test]
    fn older_frame_rejected() {
        let mut line = DelayLine::new(4000, DEFAULT_MARGIN_MS);
        line.push(CaptureFrame::neutral(100, 0)).unwrap();
        assert_eq!(
            line.push(CaptureFrame::neutral(50, 1)),
            Err(NonMonotone { t: 50, newest: 100 })
        );
        assert_eq!(line.rejected(), 1);
        assert_eq!(line.len(), 1);
    }

    #[test]
    fn ten_minutes_at_60fps_stays_bounded() {
        let mut line = DelayLine::new(4000, DEFAULT_MARGIN_MS);
        let mut max_len = 0;
        for i in 0..(10 * 60 * 60u64) {
            line.push(CaptureFrame::neutral((i * 1000 / 60) as i64, i)).unwrap();
            max_len = max_len.max(line.len());
            assert!(line.span_ms() <= 5000);
        }
        // 5 s of 60 fps frames, inclusive of both ends
        assert!(max_len <= 301, "{max_len}");
        assert!(line.oldest().unwrap().t >= line.newest().unwrap().t - 5000);
    }

    #[test]
    fn sample_before_buffer_is_none() {
        let mut line = DelayLine::new(4000, DEFAULT_MARGIN_MS);
        line.push(CaptureFrame::neutral(1000, 0)).unwrap();
        assert!(line.sample(999).is_none());
        assert!(line.sample(1000).is_some());
        assert_eq!(line.sample(5000).unwrap().t, 5000);
    }
}
