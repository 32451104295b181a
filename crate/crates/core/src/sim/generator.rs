//! Constant-rate sources shaped to the per-frame burst budget.

use thiserror::Error;

use crate::framing::{FrameClock, Nanos, NANOS_PER_SEC};
use crate::ids::ConnectionId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("connection {conn}: packet of {size} bits exceeds the maximum packet size {max}")]
    PacketTooLarge {
        conn: ConnectionId,
        size: u64,
        max: u64,
    },
    #[error("connection {conn}: packet of {size} bits never fits the per-frame budget of rate {rate} b/s")]
    ExceedsFrameBudget {
        conn: ConnectionId,
        size: u64,
        rate: u64,
    },
    #[error("connection {0}: packet size must be positive")]
    EmptyPacket(ConnectionId),
}

/// Emits one packet every `packet_bits / rate` seconds, starting at
/// `start + offset` and stopping before `stop`.
///
/// Within every instance of the source's frame clock no more than
/// `rate * frame` bits are emitted; an emission that would exceed that is
/// pushed to the start of the next instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generator {
    pub connection: ConnectionId,
    pub rate_bps: u64,
    pub packet_bits: u64,
    pub start: Nanos,
    pub stop: Nanos,
    pub offset: Nanos,
}

impl Generator {
    pub fn validate(&self, max_packet_bits: u64, frame: Nanos) -> Result<(), GeneratorError> {
        let conn = self.connection;
        if self.packet_bits == 0 {
            return Err(GeneratorError::EmptyPacket(conn));
        }
        if self.packet_bits > max_packet_bits {
            return Err(GeneratorError::PacketTooLarge {
                conn,
                size: self.packet_bits,
                max: max_packet_bits,
            });
        }
        if self.rate_bps > 0 && !fits(self.packet_bits, self.rate_bps, frame) {
            return Err(GeneratorError::ExceedsFrameBudget {
                conn,
                size: self.packet_bits,
                rate: self.rate_bps,
            });
        }
        Ok(())
    }

    /// Emission times up to and including `until`, measured against the
    /// departing clock of the first link.
    pub fn emissions(&self, clock: &FrameClock, until: Nanos) -> Vec<Nanos> {
        let mut out = Vec::new();
        if self.rate_bps == 0 || self.packet_bits == 0 {
            return out;
        }
        if !fits(self.packet_bits, self.rate_bps, clock.frame()) {
            return out;
        }
        let base = self.start + self.offset;
        let spacing_num = self.packet_bits as u128 * NANOS_PER_SEC as u128;
        let mut instance_end = 0;
        let mut used_bits = 0u64;
        let mut last = 0;
        for n in 0u128.. {
            let nominal = base as u128 + n * spacing_num / self.rate_bps as u128;
            let mut t = (nominal.min(Nanos::MAX as u128) as Nanos).max(last);
            if t >= self.stop || t > until {
                break;
            }
            let end = clock.next_boundary_after(t);
            if end != instance_end {
                instance_end = end;
                used_bits = 0;
            }
            if !fits(used_bits + self.packet_bits, self.rate_bps, clock.frame()) {
                t = instance_end;
                instance_end = clock.next_boundary_after(t);
                used_bits = 0;
                if t >= self.stop || t > until {
                    break;
                }
            }
            used_bits += self.packet_bits;
            last = t;
            out.push(t);
        }
        out
    }
}

/// `bits <= rate * frame`, exactly.
fn fits(bits: u64, rate_bps: u64, frame: Nanos) -> bool {
    bits as u128 * NANOS_PER_SEC as u128 <= rate_bps as u128 * frame as u128
}
