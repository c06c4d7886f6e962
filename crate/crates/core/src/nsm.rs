//! Network status monitor: reads the per-client channel state and picks a
//! compression ratio from a short threshold table.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTrace, Direction};
use crate::codec::Cr;
use crate::error::{Result, SimError};

/// Upper bound on table rows, which bounds the cost of one lookup.
pub const MAX_TABLE_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsmRule {
    pub snr_floor_db: f64,
    pub cr: Cr,
}

/// Rows are scanned top-down; the first row whose floor is at or below the
/// observed SNR wins, otherwise `fallback`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsmPolicy {
    table: Vec<NsmRule>,
    fallback: Cr,
}

impl Default for NsmPolicy {
    /// >=15 dB -> 1/3, >=10 -> 1/6, >=5 -> 1/8, else 1/12.
    fn default() -> Self {
        let [a, b, c, d] = Cr::standard_set();
        NsmPolicy::new(
            vec![
                NsmRule { snr_floor_db: 15.0, cr: a },
                NsmRule { snr_floor_db: 10.0, cr: b },
                NsmRule { snr_floor_db: 5.0, cr: c },
            ],
            d,
        )
        .expect("default policy")
    }
}

impl NsmPolicy {
    pub fn new(table: Vec<NsmRule>, fallback: Cr) -> Result<Self> {
        let p = NsmPolicy { table, fallback };
        p.validate()?;
        Ok(p)
    }

    /// Always selects `cr`.
    pub fn fixed(cr: Cr) -> Self {
        NsmPolicy {
            table: vec![NsmRule {
                snr_floor_db: f64::NEG_INFINITY,
                cr,
            }],
            fallback: cr,
        }
    }

    /// Checks the table length, strictly descending floors, and that the
    /// ratio never grows as the floor drops (so selection is monotone in SNR).
    pub fn validate(&self) -> Result<()> {
        if self.table.len() > MAX_TABLE_LEN {
            return Err(SimError::config(
                "nsm.table",
                format!("{} rows exceed the limit of {MAX_TABLE_LEN}", self.table.len()),
            ));
        }
        if self.table.iter().any(|r| r.snr_floor_db.is_nan()) {
            return Err(SimError::config("nsm.table", "NaN SNR floor"));
        }
        if self.table.windows(2).any(|w| w[1].snr_floor_db >= w[0].snr_floor_db) {
            return Err(SimError::config("nsm.table", "SNR floors must be strictly descending"));
        }
        let crs: Vec<Cr> = self.table.iter().map(|r| r.cr).chain([self.fallback]).collect();
        if crs.windows(2).any(|w| w[1] > w[0]) {
            return Err(SimError::config(
                "nsm.table",
                "compression ratios must not increase as the SNR floor decreases",
            ));
        }
        Ok(())
    }

    pub fn table(&self) -> &[NsmRule] {
        &self.table
    }

    pub fn fallback(&self) -> Cr {
        self.fallback
    }

    /// Every ratio the policy can emit.
    pub fn ratios(&self) -> Vec<Cr> {
        let mut v: Vec<Cr> = self.table.iter().map(|r| r.cr).chain([self.fallback]).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn select_cr(&self, snr_db: f64) -> Cr {
        self.select_cr_counted(snr_db).0
    }

    /// Selection plus the number of floor comparisons it took.
    pub fn select_cr_counted(&self, snr_db: f64) -> (Cr, usize) {
        let mut steps = 0;
        for rule in &self.table {
            steps += 1;
            if snr_db >= rule.snr_floor_db {
                return (rule.cr, steps);
            }
        }
        (self.fallback, steps)
    }
}

/// Effective uplink SNR (fading gain included) that the monitor sees for
/// `client` in `round`, assuming perfect CSI.
pub fn observe(trace: &ChannelTrace, client: usize, round: usize) -> Result<f64> {
    Ok(trace.get(client, round, Direction::Uplink)?.effective_snr_db())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, ChannelRealization, SnrSchedule};
    use proptest::prelude::*;

    fn cr(s: &str) -> Cr {
        s.parse().unwrap()
    }

    #[test]
    fn default_table_lookups() {
        let p = NsmPolicy::default();
        assert_eq!(p.select_cr(18.0), cr("1/3"));
        assert_eq!(p.select_cr(10.0), cr("1/6"));
        assert_eq!(p.select_cr(9.999), cr("1/8"));
        assert_eq!(p.select_cr(-3.0), cr("1/12"));
    }

    #[test]
    fn invalid_tables_rejected() {
        let rule = |f: f64, c: &str| NsmRule { snr_floor_db: f, cr: cr(c) };
        assert!(NsmPolicy::new(vec![rule(5.0, "1/3"), rule(10.0, "1/6")], cr("1/12")).is_err());
        assert!(NsmPolicy::new(vec![rule(10.0, "1/6"), rule(5.0, "1/3")], cr("1/12")).is_err());
        assert!(NsmPolicy::new(vec![rule(10.0, "1/6")], cr("1/3")).is_err());
        let long: Vec<NsmRule> = (0..9).map(|i| rule(100.0 - i as f64, "1/3")).collect();
        assert!(NsmPolicy::new(long, cr("1/3")).is_err());
    }

    #[test]
    fn fixed_policy_ignores_snr() {
        let p = NsmPolicy::fixed(cr("1/8"));
        p.validate().unwrap();
        for s in [-50.0, 0.0, 30.0] {
            assert_eq!(p.select_cr(s), cr("1/8"));
        }
        assert_eq!(p.ratios(), vec![cr("1/8")]);
    }

    #[test]
    fn observe_awgn_and_unit_fading() {
        let trace = ChannelTrace::generate(ChannelModel::Awgn, &SnrSchedule::Constant(10.0), 3, 4, 0);
        for c in 0..3 {
            for r in 0..4 {
                assert_eq!(observe(&trace, c, r).unwrap(), 10.0);
                assert_eq!(observe(&trace, c, r).unwrap(), observe(&trace, c, r).unwrap());
            }
        }
        let cell = |h| ChannelRealization {
            model: ChannelModel::Rayleigh,
            snr_db: 7.0,
            h,
            noise_seed: 1,
        };
        let t = ChannelTrace::from_cells(1, 1, vec![[cell(1.0), cell(0.3)]]).unwrap();
        assert_eq!(observe(&t, 0, 0).unwrap(), 7.0);
        assert!(observe(&t, 1, 0).is_err());
    }

    fn arb_policy() -> impl Strategy<Value = NsmPolicy> {
        (proptest::collection::vec((0.5f64..10.0, 0usize..4), 0..=MAX_TABLE_LEN), 0usize..4).prop_map(
            |(steps, fb)| {
                let set = Cr::standard_set();
                let mut floor = 40.0;
                let mut idx = 0;
                let mut table = Vec::new();
                for (drop, bump) in steps {
                    floor -= drop;
                    idx = (idx + bump / 3).min(3);
                    table.push(NsmRule { snr_floor_db: floor, cr: set[idx] });
                }
                NsmPolicy::new(table, set[idx.max(fb)]).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn selection_is_monotone(p in arb_policy(), a in -40.0f64..50.0, b in -40.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.select_cr(hi) >= p.select_cr(lo));
        }

        #[test]
        fn lookup_cost_bounded(p in arb_policy(), s in -100.0f64..100.0) {
            let (_, steps) = p.select_cr_counted(s);
            prop_assert!(steps <= p.table().len() && steps <= MAX_TABLE_LEN);
        }
    }
}
