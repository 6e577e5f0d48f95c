//! # crowdlearn
//!
//! Crowdsourced learning mechanisms: a market in which participants bet on
//! updates to a published hypothesis and are paid according to how much their
//! update improves a loss on test data revealed at the close.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`convex`] | feasible sets, convex potentials and conjugates, Bregman divergences, the solver |
//! | [`gsr`] | generalized scoring rules, divergence-based losses, beliefs and outcomes |
//! | [`mechanism`] | the bid/settle protocol, ledgers, worst-case loss, vouchers |
//! | [`apmm`] | cost-function market makers and their duality with divergence losses |
//! | [`markets`] | compression, regression, and label-betting markets |
//! | [`sim`] | trader agents, simulation runs, reports, and ledger replay |
//!
//! ```
//! use crowdlearn::markets::CompressionMarket;
//! use crowdlearn::mechanism::{Ledger, Wallets};
//! use crowdlearn::gsr::Outcome;
//!
//! let market = CompressionMarket::uniform(2, 1.0, vec![0, 1, 1, 1]);
//! let spec = market.clm().unwrap();
//! let mut ledger = Ledger::open(market.header(0));
//! let cost = ledger
//!     .post_bid(&spec, "alice", vec![0.25, 0.75], &mut Wallets::unlimited())
//!     .unwrap();
//! assert!((cost - 2f64.ln()).abs() < 1e-12);
//! let payouts = ledger.settle(&spec, Outcome::Index(1)).unwrap();
//! assert!(payouts["alice"] > cost);
//! ```

pub mod apmm;
pub mod convex;
pub mod gsr;
pub mod markets;
pub mod mechanism;
pub mod rng;
pub mod sim;

/// The README and book chapters, compiled as doctests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/convex.md")]
    mod convex {}
    #[doc = include_str!("../../../book/src/scoring_rules.md")]
    mod scoring_rules {}
    #[doc = include_str!("../../../book/src/mechanism.md")]
    mod mechanism {}
    #[doc = include_str!("../../../book/src/market_makers.md")]
    mod market_makers {}
    #[doc = include_str!("../../../book/src/markets.md")]
    mod markets {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
