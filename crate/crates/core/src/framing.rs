//! Frame clocks and traffic classes.
//!
//! Every (link, class) pair carries a periodic frame clock. Instance `k` of a
//! clock covers the half-open interval `[phase + k*f, phase + (k+1)*f)`, so a
//! time that falls exactly on a boundary belongs to the instance that starts
//! there. The receiving end of a link sees the same frames delayed by the
//! link latency.

use thiserror::Error;

use crate::ids::ClassId;

/// Simulation time and durations, in integer nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_US: Nanos = 1_000;
pub const NANOS_PER_MS: Nanos = 1_000_000;
pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FramingError {
    #[error("time {t} ns is before clock epoch {phase} ns")]
    BeforeEpoch { t: Nanos, phase: Nanos },
    #[error("frame duration must be positive")]
    ZeroFrame,
    #[error("phase {phase} ns is not within [0, {frame}) ns")]
    PhaseOutOfRange { phase: Nanos, frame: Nanos },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameClock {
    frame: Nanos,
    phase: Nanos,
}

impl FrameClock {
    pub fn new(frame: Nanos, phase: Nanos) -> Result<Self, FramingError> {
        if frame == 0 {
            return Err(FramingError::ZeroFrame);
        }
        if phase >= frame {
            return Err(FramingError::PhaseOutOfRange { phase, frame });
        }
        Ok(Self { frame, phase })
    }

    /// Clock with its first boundary at `offset mod frame`.
    pub fn with_offset(frame: Nanos, offset: Nanos) -> Result<Self, FramingError> {
        if frame == 0 {
            return Err(FramingError::ZeroFrame);
        }
        Self::new(frame, offset % frame)
    }

    pub fn frame(&self) -> Nanos {
        self.frame
    }

    pub fn phase(&self) -> Nanos {
        self.phase
    }

    /// Index of the frame instance containing `t`.
    pub fn frame_index(&self, t: Nanos) -> Result<u64, FramingError> {
        let since = self.since_epoch(t)?;
        Ok(since / self.frame)
    }

    /// Start of instance `k`.
    pub fn frame_start(&self, k: u64) -> Nanos {
        self.phase + k * self.frame
    }

    /// First boundary strictly after `t`.
    pub fn next_frame_start(&self, t: Nanos) -> Result<Nanos, FramingError> {
        let k = self.frame_index(t)?;
        Ok(self.frame_start(k + 1))
    }

    /// Like [`next_frame_start`](Self::next_frame_start) but total over
    /// `t >= 0`: times before the epoch fall in the instance that ends at the
    /// epoch.
    pub fn next_boundary_after(&self, t: Nanos) -> Nanos {
        if t < self.phase {
            self.phase
        } else {
            // t >= phase, cannot fail
            self.frame_start((t - self.phase) / self.frame + 1)
        }
    }

    /// The receiving-end view of this clock after a link latency.
    pub fn arriving_clock(&self, link_latency: Nanos) -> FrameClock {
        FrameClock {
            frame: self.frame,
            phase: ((self.phase as u128 + link_latency as u128) % self.frame as u128) as Nanos,
        }
    }

    fn since_epoch(&self, t: Nanos) -> Result<Nanos, FramingError> {
        t.checked_sub(self.phase).ok_or(FramingError::BeforeEpoch {
            t,
            phase: self.phase,
        })
    }
}

/// A frame type and the traffic class it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficClass {
    pub id: ClassId,
    pub frame: Nanos,
    /// Share of link capacity set aside for this class.
    pub bandwidth_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassSetError {
    #[error("no traffic classes defined")]
    Empty,
    #[error("class ids must be 1..=N in order; position {position} has id {id}")]
    NonContiguous { position: usize, id: ClassId },
    #[error("class {0} has a zero frame duration")]
    ZeroFrame(ClassId),
    #[error(
        "class {id} frame {frame} ns is not longer than the previous class frame {previous} ns"
    )]
    NotIncreasing {
        id: ClassId,
        frame: Nanos,
        previous: Nanos,
    },
    #[error("class {id} bandwidth fraction {fraction} is outside [0, 1]")]
    FractionRange { id: ClassId, fraction: f64 },
    #[error("bandwidth fractions sum to {0}, more than 1")]
    FractionSum(f64),
}

// Decimal fractions such as 0.7 + 0.2 + 0.1 do not sum to exactly 1 in binary.
const FRACTION_SUM_SLACK: f64 = 1e-9;

/// Validated, priority-ordered list of traffic classes.
///
/// Position 0 holds class 1, the highest-priority class with the shortest
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSet {
    classes: Vec<TrafficClass>,
}

impl ClassSet {
    pub fn new(classes: Vec<TrafficClass>) -> Result<Self, ClassSetError> {
        if classes.is_empty() {
            return Err(ClassSetError::Empty);
        }
        let mut sum = 0.0;
        for (pos, c) in classes.iter().enumerate() {
            if c.id.0 as usize != pos + 1 {
                return Err(ClassSetError::NonContiguous {
                    position: pos,
                    id: c.id,
                });
            }
            if c.frame == 0 {
                return Err(ClassSetError::ZeroFrame(c.id));
            }
            if pos > 0 && c.frame <= classes[pos - 1].frame {
                return Err(ClassSetError::NotIncreasing {
                    id: c.id,
                    frame: c.frame,
                    previous: classes[pos - 1].frame,
                });
            }
            if !(0.0..=1.0).contains(&c.bandwidth_fraction) {
                return Err(ClassSetError::FractionRange {
                    id: c.id,
                    fraction: c.bandwidth_fraction,
                });
            }
            sum += c.bandwidth_fraction;
        }
        if sum > 1.0 + FRACTION_SUM_SLACK {
            return Err(ClassSetError::FractionSum(sum));
        }
        Ok(Self { classes })
    }

    /// Classes with the given frames and no bandwidth allocation.
    pub fn from_frames(frames: &[Nanos]) -> Result<Self, ClassSetError> {
        Self::new(
            frames
                .iter()
                .enumerate()
                .map(|(i, &frame)| TrafficClass {
                    id: ClassId(i as u32 + 1),
                    frame,
                    bandwidth_fraction: 0.0,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, id: ClassId) -> Option<&TrafficClass> {
        (id.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.classes.get(i))
    }

    pub fn frame(&self, id: ClassId) -> Option<Nanos> {
        self.get(id).map(|c| c.frame)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrafficClass> {
        self.classes.iter()
    }

    pub fn frames(&self) -> Vec<Nanos> {
        self.classes.iter().map(|c| c.frame).collect()
    }

    /// Zero-based priority rank, 0 is served first.
    pub fn rank(&self, id: ClassId) -> Option<usize> {
        self.get(id).map(|_| id.0 as usize - 1)
    }
}
