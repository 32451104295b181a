//! Connection admission.
//!
//! A connection joins only if, on every link of its path, (a) its rate does
//! not exceed the link capacity, (b) the summed class loads stay within the
//! capacity, and (c) the per-class frame constraint holds for every class
//! `j`:
//!
//! ```text
//! LHS_j = sum_{i=j..N} D_i * (1 + ceil(f_j / f_i)) * (f_i / f_j) - D_j
//! LHS_j <= C - S / f_j    (j >= 2)
//! LHS_j <= C              (j == 1)
//! ```
//!
//! with classes ordered by increasing frame duration, `D_i` the class-i load
//! on the link, `C` its capacity and `S` the maximum packet size. Verdicts
//! are computed in exact rationals with no tolerance.

use std::collections::BTreeMap;

use num_rational::BigRational;
use thiserror::Error;

use crate::framing::{ClassSet, Nanos, NANOS_PER_SEC};
use crate::ids::{ClassId, ConnectionId, LinkId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdmissionError {
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("class list is empty")]
    NoClasses,
    #[error("load and frame lists differ in length ({loads} vs {frames})")]
    LengthMismatch { loads: usize, frames: usize },
    #[error("connection {0} has an empty path")]
    EmptyPath(ConnectionId),
    #[error("connection {conn} uses link {link} more than once")]
    RepeatedLink { conn: ConnectionId, link: LinkId },
}

/// A flow admitted (or asking to be admitted) along a fixed route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub id: ConnectionId,
    pub class: ClassId,
    pub rate_bps: u64,
    pub path: Vec<LinkId>,
}

impl Connection {
    /// Bits the connection may inject per frame of length `frame`, rounded
    /// down.
    pub fn frame_budget_bits(&self, frame: Nanos) -> u64 {
        (self.rate_bps as u128 * frame as u128 / NANOS_PER_SEC as u128) as u64
    }
}

/// Outcome of the frame constraint for one class index `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintVerdict<T> {
    pub class: ClassId,
    pub lhs: T,
    pub rhs: T,
    /// `rhs - lhs`, negative when violated.
    pub slack: T,
    pub satisfied: bool,
}

/// Evaluates the frame constraint for every class.
///
/// `loads[i]` and `frames[i]` describe class `i + 1`; frames must be sorted
/// increasingly. Units only need to be consistent (bits/s, bits and seconds
/// give slacks in bits/s).
pub fn capacity_constraint<T: Scalar>(
    capacity: &T,
    max_packet: &T,
    loads: &[T],
    frames: &[T],
) -> Result<Vec<ConstraintVerdict<T>>, AdmissionError> {
    if frames.is_empty() {
        return Err(AdmissionError::NoClasses);
    }
    if loads.len() != frames.len() {
        return Err(AdmissionError::LengthMismatch {
            loads: loads.len(),
            frames: frames.len(),
        });
    }
    let verdicts = (0..frames.len())
        .map(|j| {
            let fj = &frames[j];
            let sum = (j..frames.len()).fold(T::zero(), |acc, i| {
                let fi = &frames[i];
                let windows = T::one() + (fj.clone() / fi.clone()).ceil();
                acc + loads[i].clone() * windows * (fi.clone() / fj.clone())
            });
            let lhs = sum - loads[j].clone();
            let rhs = if j == 0 {
                capacity.clone()
            } else {
                capacity.clone() - max_packet.clone() / fj.clone()
            };
            let slack = rhs.clone() - lhs.clone();
            ConstraintVerdict {
                class: ClassId(j as u32 + 1),
                satisfied: lhs <= rhs,
                lhs,
                rhs,
                slack,
            }
        })
        .collect();
    Ok(verdicts)
}

/// Admitted load on one link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkLoad {
    pub link: LinkId,
    pub capacity_bps: u64,
    /// Index `i` holds the load of class `i + 1`.
    pub per_class_bps: Vec<u64>,
    pub max_packet_bits: u64,
}

impl LinkLoad {
    pub fn new(link: LinkId, capacity_bps: u64, classes: usize, max_packet_bits: u64) -> Self {
        Self {
            link,
            capacity_bps,
            per_class_bps: vec![0; classes],
            max_packet_bits,
        }
    }

    pub fn class_load(&self, class: ClassId) -> u64 {
        (class.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.per_class_bps.get(i))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_bps(&self) -> u128 {
        self.per_class_bps.iter().map(|&d| d as u128).sum()
    }

    /// Summed class loads do not exceed the capacity.
    pub fn check_aggregate(&self) -> bool {
        self.total_bps() <= self.capacity_bps as u128
    }

    pub fn check_capacity_constraint<T: Scalar>(
        &self,
        classes: &ClassSet,
    ) -> Result<Vec<ConstraintVerdict<T>>, AdmissionError> {
        if classes.is_empty() {
            return Err(AdmissionError::NoClasses);
        }
        let frames: Vec<T> = classes
            .iter()
            .map(|c| T::ratio(c.frame, NANOS_PER_SEC))
            .collect();
        let loads: Vec<T> = (0..classes.len())
            .map(|i| T::from_u64(self.per_class_bps.get(i).copied().unwrap_or(0)))
            .collect();
        capacity_constraint(
            &T::from_u64(self.capacity_bps),
            &T::from_u64(self.max_packet_bits),
            &loads,
            &frames,
        )
    }

    fn add(&mut self, class: ClassId, rate: u64) {
        let i = class.0 as usize - 1;
        self.per_class_bps[i] += rate;
    }

    fn remove(&mut self, class: ClassId, rate: u64) {
        let i = class.0 as usize - 1;
        self.per_class_bps[i] -= rate;
    }
}

/// Rate does not exceed the capacity of any link on the path.
pub fn check_rate(
    conn: &Connection,
    capacities: &BTreeMap<LinkId, u64>,
) -> Result<bool, AdmissionError> {
    Ok(first_rate_failure(conn, capacities)?.is_none())
}

fn first_rate_failure(
    conn: &Connection,
    capacities: &BTreeMap<LinkId, u64>,
) -> Result<Option<LinkId>, AdmissionError> {
    for &link in &conn.path {
        let cap = capacities
            .get(&link)
            .ok_or(AdmissionError::UnknownLink(link))?;
        if conn.rate_bps > *cap {
            return Ok(Some(link));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailedCheck {
    Rate,
    Aggregate,
    /// The frame constraint failed for this class index.
    FrameConstraint(ClassId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Admitted,
    Rejected { check: FailedCheck, link: LinkId },
}

impl Decision {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Decision::Admitted)
    }
}

/// Exact per-link verdicts, as reported by the `admit` command.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkAdmissionReport {
    pub load: LinkLoad,
    pub aggregate_ok: bool,
    pub constraint: Vec<ConstraintVerdict<BigRational>>,
}

impl LinkAdmissionReport {
    pub fn satisfied(&self) -> bool {
        self.aggregate_ok && self.constraint.iter().all(|v| v.satisfied)
    }
}

/// Network-wide admission state: the class loads of every link.
#[derive(Debug, Clone)]
pub struct AdmissionControl {
    classes: ClassSet,
    links: BTreeMap<LinkId, LinkLoad>,
    capacities: BTreeMap<LinkId, u64>,
    admitted: Vec<ConnectionId>,
}

impl AdmissionControl {
    pub fn new(
        classes: ClassSet,
        max_packet_bits: u64,
        links: impl IntoIterator<Item = (LinkId, u64)>,
    ) -> Self {
        let n = classes.len();
        let capacities: BTreeMap<LinkId, u64> = links.into_iter().collect();
        let links = capacities
            .iter()
            .map(|(&id, &cap)| (id, LinkLoad::new(id, cap, n, max_packet_bits)))
            .collect();
        Self {
            classes,
            links,
            capacities,
            admitted: Vec::new(),
        }
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn load(&self, link: LinkId) -> Option<&LinkLoad> {
        self.links.get(&link)
    }

    pub fn loads(&self) -> impl Iterator<Item = &LinkLoad> {
        self.links.values()
    }

    pub fn admitted(&self) -> &[ConnectionId] {
        &self.admitted
    }

    /// Tentatively adds the connection's rate to every link on its path and
    /// keeps it only if all checks pass on all of those links.
    pub fn admit(&mut self, conn: &Connection) -> Result<Decision, AdmissionError> {
        self.validate(conn)?;
        if let Some(link) = first_rate_failure(conn, &self.capacities)? {
            return Ok(Decision::Rejected {
                check: FailedCheck::Rate,
                link,
            });
        }
        for link in &conn.path {
            self.links
                .get_mut(link)
                .expect("validated")
                .add(conn.class, conn.rate_bps);
        }
        match self.first_failure(&conn.path)? {
            None => {
                self.admitted.push(conn.id);
                Ok(Decision::Admitted)
            }
            Some((check, link)) => {
                for l in &conn.path {
                    self.links
                        .get_mut(l)
                        .expect("validated")
                        .remove(conn.class, conn.rate_bps);
                }
                Ok(Decision::Rejected { check, link })
            }
        }
    }

    /// Adds load without running any check.
    pub fn force(&mut self, conn: &Connection) -> Result<(), AdmissionError> {
        self.validate(conn)?;
        for link in &conn.path {
            self.links
                .get_mut(link)
                .expect("validated")
                .add(conn.class, conn.rate_bps);
        }
        self.admitted.push(conn.id);
        Ok(())
    }

    pub fn report(&self, link: LinkId) -> Result<LinkAdmissionReport, AdmissionError> {
        let load = self
            .links
            .get(&link)
            .ok_or(AdmissionError::UnknownLink(link))?;
        Ok(LinkAdmissionReport {
            load: load.clone(),
            aggregate_ok: load.check_aggregate(),
            constraint: load.check_capacity_constraint(&self.classes)?,
        })
    }

    pub fn reports(&self) -> Result<Vec<LinkAdmissionReport>, AdmissionError> {
        self.links.keys().map(|&l| self.report(l)).collect()
    }

    fn validate(&self, conn: &Connection) -> Result<(), AdmissionError> {
        if self.classes.get(conn.class).is_none() {
            return Err(AdmissionError::UnknownClass(conn.class));
        }
        if conn.path.is_empty() {
            return Err(AdmissionError::EmptyPath(conn.id));
        }
        for (k, link) in conn.path.iter().enumerate() {
            if !self.links.contains_key(link) {
                return Err(AdmissionError::UnknownLink(*link));
            }
            if conn.path[..k].contains(link) {
                return Err(AdmissionError::RepeatedLink {
                    conn: conn.id,
                    link: *link,
                });
            }
        }
        Ok(())
    }

    fn first_failure(
        &self,
        path: &[LinkId],
    ) -> Result<Option<(FailedCheck, LinkId)>, AdmissionError> {
        for link in path {
            if !self.links[link].check_aggregate() {
                return Ok(Some((FailedCheck::Aggregate, *link)));
            }
        }
        for link in path {
            let verdicts =
                self.links[link].check_capacity_constraint::<BigRational>(&self.classes)?;
            if let Some(v) = verdicts.iter().find(|v| !v.satisfied) {
                return Ok(Some((FailedCheck::FrameConstraint(v.class), *link)));
            }
        }
        Ok(None)
    }
}
