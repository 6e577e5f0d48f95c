//! Participant balances and the voucher pool.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MechanismError, CURRENCY_TOL};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub cash: f64,
    pub voucher: f64,
    /// Total charged to this account.
    pub spent: f64,
    /// Part of `spent` paid from vouchers.
    pub voucher_drawn: f64,
}

/// Balances of all participants. In unlimited mode bids are never rejected
/// for lack of funds and cash may go negative.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Wallets {
    unlimited: bool,
    accounts: BTreeMap<String, Account>,
}

impl Wallets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unlimited() -> Self {
        Self { unlimited: true, accounts: BTreeMap::new() }
    }

    pub fn fund(&mut self, participant: &str, cash: f64) {
        self.accounts.entry(participant.to_string()).or_default().cash += cash;
    }

    pub fn grant_voucher(&mut self, participant: &str, amount: f64) {
        self.accounts.entry(participant.to_string()).or_default().voucher += amount;
    }

    pub fn account(&self, participant: &str) -> Option<&Account> {
        self.accounts.get(participant)
    }

    pub fn accounts(&self) -> &BTreeMap<String, Account> {
        &self.accounts
    }

    /// Cash plus voucher, or infinity in unlimited mode.
    pub fn balance(&self, participant: &str) -> f64 {
        if self.unlimited {
            return f64::INFINITY;
        }
        self.accounts.get(participant).map_or(0.0, |a| a.cash + a.voucher)
    }

    /// Charges `amount`, drawing voucher funds first. A negative amount is a
    /// credit to cash.
    pub fn debit(&mut self, participant: &str, amount: f64) -> Result<(), MechanismError> {
        let balance = self.balance(participant);
        if amount > balance + CURRENCY_TOL {
            return Err(MechanismError::Rejected(format!(
                "{participant} has {balance} but the bid costs {amount}"
            )));
        }
        let account = self.accounts.entry(participant.to_string()).or_default();
        account.spent += amount;
        if amount <= 0.0 {
            account.cash -= amount;
            return Ok(());
        }
        let from_voucher = account.voucher.min(amount);
        account.voucher -= from_voucher;
        account.voucher_drawn += from_voucher;
        account.cash -= amount - from_voucher;
        if !self.unlimited && account.cash < 0.0 {
            account.cash = 0.0;
        }
        Ok(())
    }
}

/// Vouchers of `amount` for each of the first `m` participants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoucherPool {
    pub m: usize,
    pub amount: f64,
    /// Amount issued to each participant.
    pub issued: BTreeMap<String, f64>,
}

impl VoucherPool {
    pub fn new(m: usize, amount: f64) -> Self {
        assert!(amount >= 0.0 && amount.is_finite(), "voucher amount must be non-negative");
        Self { m, amount, issued: BTreeMap::new() }
    }

    /// Issues a voucher to `participant` and returns its amount.
    pub fn issue(&mut self, participant: &str) -> Result<f64, MechanismError> {
        if self.issued.contains_key(participant) {
            return Err(MechanismError::Voucher(format!("{participant} already holds a voucher")));
        }
        if self.issued.len() >= self.m {
            return Err(MechanismError::Voucher(format!("all {} vouchers are issued", self.m)));
        }
        self.issued.insert(participant.to_string(), self.amount);
        Ok(self.amount)
    }

    /// Issues a voucher and credits it to the participant's wallet.
    pub fn issue_to(&mut self, participant: &str, wallets: &mut Wallets) -> Result<f64, MechanismError> {
        let amount = self.issue(participant)?;
        wallets.grant_voucher(participant, amount);
        Ok(amount)
    }

    pub fn is_exhausted(&self) -> bool {
        self.issued.len() >= self.m
    }

    /// Total value issued so far.
    pub fn liability(&self) -> f64 {
        self.issued.values().sum()
    }

    /// `m * C`, the operational cost the pool adds to the mechanism.
    pub fn added_operational_cost(&self) -> f64 {
        self.m as f64 * self.amount
    }
}
