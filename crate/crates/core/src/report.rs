//! Verdicts and report records shared by the Monte Carlo checks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The estimate cannot be trusted (explosions, heavy tails, excluded paths).
    Inconclusive,
    /// The estimate was computed but a hypothesis of the bound did not hold.
    UnverifiedPremise,
    /// The method could not decide (e.g. zero hits for a naive estimator).
    Unresolved,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Worst of two verdicts: any failure dominates, then undecided states.
    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        let rank = |v: Verdict| match v {
            Pass => 0,
            Unresolved => 1,
            UnverifiedPremise => 2,
            Inconclusive => 3,
            Fail => 4,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }

    pub fn all(vs: impl IntoIterator<Item = Verdict>) -> Verdict {
        vs.into_iter().fold(Verdict::Pass, Verdict::and)
    }

    /// Process exit code: 0 all pass, 1 any failure, 2 undecided.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            _ => 2,
        }
    }
}

/// Monte Carlo estimate compared with a bound.
///
/// `pass` is `estimate ≤ bound + 3·std_error + bias_slack`; `verdict`
/// additionally downgrades to inconclusive when paths exploded or the
/// estimate is dominated by a few paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub time: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    /// Discretization slack `|Q_h − Q_{2h}|` from a matched-noise halving.
    pub bias_slack: f64,
    pub pass: bool,
    pub verdict: Verdict,
    pub n_paths: usize,
    pub exploded_fraction: f64,
    /// Share of the estimate carried by the top 0.1% of paths.
    pub tail_share: f64,
    pub notes: Vec<String>,
}

impl MomentReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        time: f64,
        estimate: f64,
        std_error: f64,
        bound: f64,
        bias_slack: f64,
        n_paths: usize,
        exploded_fraction: f64,
        tail_share: f64,
    ) -> Self {
        let pass = estimate <= bound + 3.0 * std_error + bias_slack;
        let mut notes = Vec::new();
        let mut verdict = Verdict::from_pass(pass);
        if exploded_fraction > 0.0 {
            notes.push(format!("{exploded_fraction} of paths stopped before {time}"));
            verdict = verdict.and(Verdict::Inconclusive);
        }
        if tail_share > crate::stats::TAIL_SHARE_LIMIT {
            notes.push(format!("top 0.1% of paths carry {tail_share:.3} of the estimate"));
            verdict = verdict.and(Verdict::Inconclusive);
        }
        Self {
            time,
            estimate,
            std_error,
            bound,
            bias_slack,
            pass,
            verdict,
            n_paths,
            exploded_fraction,
            tail_share,
            notes,
        }
    }

    pub fn downgrade(&mut self, v: Verdict, note: impl Into<String>) {
        self.verdict = self.verdict.and(v);
        self.notes.push(note.into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_combination_prefers_failure() {
        assert_eq!(Verdict::all([Verdict::Pass, Verdict::Inconclusive]), Verdict::Inconclusive);
        assert_eq!(Verdict::all([Verdict::Inconclusive, Verdict::Fail]), Verdict::Fail);
        assert_eq!(Verdict::all([]), Verdict::Pass);
        assert_eq!(Verdict::Fail.exit_code(), 1);
        assert_eq!(Verdict::Unresolved.exit_code(), 2);
    }

    #[test]
    fn moment_report_rule() {
        let r = MomentReport::new(1.0, 1.03, 0.01, 1.0, 0.0, 100, 0.0, 0.0);
        assert!(r.pass);
        let r = MomentReport::new(1.0, 1.05, 0.01, 1.0, 0.0, 100, 0.0, 0.0);
        assert!(!r.pass);
        let r = MomentReport::new(1.0, 0.5, 0.01, 1.0, 0.0, 100, 0.01, 0.0);
        assert!(r.pass);
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }
}
