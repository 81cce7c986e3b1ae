//! KV cache accounting with admission reservations.
//!
//! A request reserves its peak footprint when first admitted; stored bytes
//! then grow inside that reservation as chunks and tokens land. This keeps
//! `used <= reserved <= capacity` at every step and rules out mid-flight
//! out-of-memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("reserving {want} bytes exceeds capacity ({reserved} of {capacity} reserved)")]
    OverCapacity { want: u64, reserved: u64, capacity: u64 },
    #[error("storing {want} bytes exceeds reservation ({used} of {reserved} used)")]
    OverReservation { want: u64, used: u64, reserved: u64 },
    #[error("releasing more than is held")]
    Underflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvLedger {
    capacity: u64,
    used: u64,
    reserved: u64,
}

/// One KV state change, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvEvent {
    /// Admission: reserve the request's peak footprint.
    Admit { tokens: u64 },
    /// A prefill chunk (or transferred prompt) lands.
    Store { tokens: u64 },
    DecodeToken,
    /// The request leaves: drop what it stored and what it reserved.
    Release { stored: u64, reserved: u64 },
}

impl KvLedger {
    pub fn new(capacity: u64) -> Self {
        KvLedger {
            capacity,
            used: 0,
            reserved: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn reserved(&self) -> u64 {
        self.reserved
    }

    pub fn can_reserve(&self, bytes: u64) -> bool {
        self.reserved + bytes <= self.capacity
    }
}

/// Applies `event` to the ledger, with `kv_bytes_per_token` converting tokens.
pub fn kv_account(ledger: &mut KvLedger, event: KvEvent, kv_bytes_per_token: u64) -> Result<(), KvError> {
    let b = |t: u64| t * kv_bytes_per_token;
    match event {
        KvEvent::Admit { tokens } => {
            if !ledger.can_reserve(b(tokens)) {
                return Err(KvError::OverCapacity {
                    want: b(tokens),
                    reserved: ledger.reserved,
                    capacity: ledger.capacity,
                });
            }
            ledger.reserved += b(tokens);
        }
        KvEvent::Store { tokens } => store(ledger, b(tokens))?,
        KvEvent::DecodeToken => store(ledger, b(1))?,
        KvEvent::Release { stored, reserved } => {
            if b(stored) > ledger.used || b(reserved) > ledger.reserved {
                return Err(KvError::Underflow);
            }
            ledger.used -= b(stored);
            ledger.reserved -= b(reserved);
            if ledger.used > ledger.reserved {
                return Err(KvError::Underflow);
            }
        }
    }
    Ok(())
}

fn store(ledger: &mut KvLedger, bytes: u64) -> Result<(), KvError> {
    if ledger.used + bytes > ledger.reserved {
        return Err(KvError::OverReservation {
            want: bytes,
            used: ledger.used,
            reserved: ledger.reserved,
        });
    }
    ledger.used += bytes;
    Ok(())
}
