//! Per-link, per-class buffer budgets.
//!
//! The budget for a class on a link is `y * load * frame`: a constant
//! multiple of the bits the class can bring in during one of its frames.
//! During simulation the held and eligible bits of a class are checked
//! against its budget on every enqueue and the arriving packet is dropped
//! if it would not fit.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::framing::{Nanos, NANOS_PER_SEC};
use crate::ids::{ClassId, LinkId};
use crate::scalar::Scalar;

pub const DEFAULT_Y: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BufferError {
    #[error("buffer constant y = {0} must be a finite value of at least 1")]
    InvalidY(f64),
    #[error("no buffer budget for class {class} on link {link}")]
    MissingBudget { link: LinkId, class: ClassId },
}

/// `y * load * frame` in whatever units the caller uses (bits for bits/s
/// and seconds).
pub fn buffer_size<T: Scalar>(y: T, load: T, frame: T) -> T {
    y * load * frame
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferBudget {
    pub link: LinkId,
    pub class: ClassId,
    pub y: f64,
    pub load_bps: u64,
    pub frame: Nanos,
    pub budget_bits: u64,
}

impl BufferBudget {
    /// Computes the budget exactly and rounds down to whole bits.
    pub fn new(
        link: LinkId,
        class: ClassId,
        y: f64,
        load_bps: u64,
        frame: Nanos,
    ) -> Result<Self, BufferError> {
        if !y.is_finite() || y < 1.0 {
            return Err(BufferError::InvalidY(y));
        }
        let exact = buffer_size(
            BigRational::from_float(y).ok_or(BufferError::InvalidY(y))?,
            BigRational::from_integer(BigInt::from(load_bps)),
            BigRational::new(BigInt::from(frame), BigInt::from(NANOS_PER_SEC)),
        );
        let budget_bits = exact.floor().to_integer().to_u64().unwrap_or(u64::MAX);
        Ok(Self {
            link,
            class,
            y,
            load_bps,
            frame,
            budget_bits,
        })
    }

    /// The budget in kilobits, the unit the reference allocation table uses.
    pub fn kilobits(&self) -> f64 {
        self.budget_bits as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Ok,
    Overflow,
}

/// Decides whether `incoming_bits` fit next to `queued_bits`. A missing
/// budget means the queue is unbounded.
pub fn occupancy_check(
    queued_bits: u64,
    incoming_bits: u64,
    budget_bits: Option<u64>,
) -> Occupancy {
    match budget_bits {
        Some(b) if queued_bits.saturating_add(incoming_bits) > b => Occupancy::Overflow,
        _ => Occupancy::Ok,
    }
}

/// Budgets for every (link, class) pair of a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BudgetTable {
    entries: Vec<BufferBudget>,
}

impl BudgetTable {
    pub fn new(mut entries: Vec<BufferBudget>) -> Self {
        entries.sort_by_key(|b| (b.link, b.class));
        Self { entries }
    }

    pub fn get(&self, link: LinkId, class: ClassId) -> Option<&BufferBudget> {
        self.entries
            .binary_search_by_key(&(link, class), |b| (b.link, b.class))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferBudget> {
        self.entries.iter()
    }

    /// [`occupancy_check`] against this table; every (link, class) that
    /// carries traffic must have an entry.
    pub fn check(
        &self,
        link: LinkId,
        class: ClassId,
        queued_bits: u64,
        incoming_bits: u64,
    ) -> Result<Occupancy, BufferError> {
        let budget = self
            .get(link, class)
            .ok_or(BufferError::MissingBudget { link, class })?;
        Ok(occupancy_check(
            queued_bits,
            incoming_bits,
            Some(budget.budget_bits),
        ))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bits(&self) -> u64 {
        self.entries.iter().map(|b| b.budget_bits).sum()
    }
}
