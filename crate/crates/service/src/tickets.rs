//! Volatile single-use session tickets.
//!
//! A ticket binds one device draw to one pending answer. The drawn
//! statements live only here, in memory, and are dropped as soon as the
//! answer is recorded.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;
use veilpoll_core::Statement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("session token is not valid for this survey")]
    Unknown,
    #[error("session token was already used")]
    Consumed,
    #[error("session token expired")]
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TicketState {
    Open,
    /// An answer is being written; concurrent submits are refused.
    Submitting,
    Consumed,
}

#[derive(Debug)]
struct Ticket {
    survey_id: String,
    statements: Vec<Statement>,
    /// Device group (1 or 2) in split-sample surveys.
    group: Option<u8>,
    issued_at: Instant,
    state: TicketState,
}

/// What a successful claim hands to the submit path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Claim {
    pub group: Option<u8>,
}

#[derive(Debug)]
pub struct TicketTable {
    ttl: Duration,
    tickets: Mutex<HashMap<String, Ticket>>,
}

/// 128 random bits from the operating system, hex encoded.
pub fn new_token() -> String {
    let mut bytes = [0u8; 16];
    OsRng.fill_bytes(&mut bytes);
    format!("{:032x}", u128::from_be_bytes(bytes))
}

impl TicketTable {
    pub fn new(ttl: Duration) -> Self {
        TicketTable {
            ttl,
            tickets: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn issue(&self, survey_id: &str, statements: Vec<Statement>, group: Option<u8>) -> String {
        let token = new_token();
        let ticket = Ticket {
            survey_id: survey_id.to_string(),
            statements,
            group,
            issued_at: Instant::now(),
            state: TicketState::Open,
        };
        self.lock().insert(token.clone(), ticket);
        token
    }

    /// Moves an open ticket to `Submitting`. Exactly one caller wins.
    pub fn claim(&self, survey_id: &str, token: &str) -> Result<Claim, TokenError> {
        let mut tickets = self.lock();
        let ticket = match tickets.get_mut(token) {
            Some(t) if t.survey_id == survey_id => t,
            _ => return Err(TokenError::Unknown),
        };
        match ticket.state {
            TicketState::Submitting | TicketState::Consumed => Err(TokenError::Consumed),
            TicketState::Open if ticket.issued_at.elapsed() >= self.ttl => {
                tickets.remove(token);
                Err(TokenError::Expired)
            }
            TicketState::Open => {
                ticket.state = TicketState::Submitting;
                Ok(Claim {
                    group: ticket.group,
                })
            }
        }
    }

    /// Marks a claimed ticket consumed and erases its statements.
    pub fn complete(&self, token: &str) {
        if let Some(ticket) = self.lock().get_mut(token) {
            ticket.state = TicketState::Consumed;
            ticket.statements = Vec::new();
        }
    }

    /// Returns a claimed ticket to `Open` after a failed write.
    pub fn release(&self, token: &str) {
        if let Some(ticket) = self.lock().get_mut(token) {
            if ticket.state == TicketState::Submitting {
                ticket.state = TicketState::Open;
            }
        }
    }

    pub fn state(&self, token: &str) -> Option<TicketState> {
        self.lock().get(token).map(|t| t.state)
    }

    /// Statements still held for `token`; empty once consumed.
    pub fn held_statements(&self, token: &str) -> Vec<Statement> {
        self.lock()
            .get(token)
            .map(|t| t.statements.clone())
            .unwrap_or_default()
    }

    /// Drops every ticket older than the TTL. Returns how many were removed.
    pub fn purge_expired(&self) -> usize {
        let mut tickets = self.lock();
        let before = tickets.len();
        tickets
            .retain(|_, t| t.state == TicketState::Submitting || t.issued_at.elapsed() < self.ttl);
        before - tickets.len()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Ticket>> {
        self.tickets.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;
    use veilpoll_core::StatementRole;

    fn stmt() -> Vec<Statement> {
        vec![Statement::new("I am a smoker.", StatementRole::Sensitive)]
    }

    #[test]
    fn tokens_are_long_and_distinct() {
        let a = new_token();
        let b = new_token();
        assert_eq!(a.len(), 32);
        assert_ne!(a, b);
    }

    #[test]
    fn single_use() {
        let table = TicketTable::new(Duration::from_secs(60));
        let token = table.issue("s", stmt(), None);
        assert_eq!(table.claim("s", &token), Ok(Claim { group: None }));
        table.complete(&token);
        assert!(table.held_statements(&token).is_empty());
        assert_eq!(table.claim("s", &token), Err(TokenError::Consumed));
    }

    #[test]
    fn wrong_survey_or_unknown_token() {
        let table = TicketTable::new(Duration::from_secs(60));
        let token = table.issue("s", stmt(), Some(2));
        assert_eq!(table.claim("other", &token), Err(TokenError::Unknown));
        assert_eq!(table.claim("s", "nope"), Err(TokenError::Unknown));
        assert_eq!(table.claim("s", &token), Ok(Claim { group: Some(2) }));
    }

    #[test]
    fn release_reopens() {
        let table = TicketTable::new(Duration::from_secs(60));
        let token = table.issue("s", stmt(), None);
        table.claim("s", &token).unwrap();
        assert_eq!(table.claim("s", &token), Err(TokenError::Consumed));
        table.release(&token);
        assert_eq!(table.state(&token), Some(TicketState::Open));
        assert!(table.claim("s", &token).is_ok());
    }

    #[test]
    fn expiry_and_sweep() {
        let table = TicketTable::new(Duration::from_millis(20));
        let a = table.issue("s", stmt(), None);
        let _b = table.issue("s", stmt(), None);
        thread::sleep(Duration::from_millis(30));
        assert_eq!(table.claim("s", &a), Err(TokenError::Expired));
        assert_eq!(table.purge_expired(), 1);
        assert!(table.is_empty());
    }

    #[test]
    fn concurrent_claims_have_one_winner() {
        let table = Arc::new(TicketTable::new(Duration::from_secs(60)));
        let token = table.issue("s", stmt(), None);
        let winners: usize = (0..16)
            .map(|_| {
                let table = table.clone();
                let token = token.clone();
                thread::spawn(move || table.claim("s", &token).is_ok() as usize)
            })
            .map(|h| h.join().unwrap())
            .sum();
        assert_eq!(winners, 1);
    }
}
