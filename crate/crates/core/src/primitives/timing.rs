use serde::{Deserialize, Serialize};

/// Timing constants shared by the primitives, all in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingParams {
    /// Geocast window.
    pub d: u64,
    /// Registration soundness bound.
    pub d1: u64,
    /// Progress bound; also the failure-detection timeout.
    pub d2: u64,
    /// Uncontended grant bound.
    pub d3: u64,
    pub t_announce: u64,
    pub t_echo: u64,
    /// Initial mutex request retransmission period.
    pub mutex_rto: u64,
}

impl TimingParams {
    pub fn for_mean_delay(mean_delay: u64) -> Self {
        let m = mean_delay.max(1);
        let d = 4 * m;
        let t_announce = 8 * m;
        let t_echo = 8 * m;
        TimingParams {
            d,
            d1: t_announce + t_echo + d,
            d2: 60_000,
            d3: 10 * m,
            t_announce,
            t_echo,
            mutex_rto: 4 * m,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("timing.d", self.d),
            ("timing.d1", self.d1),
            ("timing.d2", self.d2),
            ("timing.d3", self.d3),
            ("timing.t_announce", self.t_announce),
            ("timing.t_echo", self.t_echo),
            ("timing.mutex_rto", self.mutex_rto),
        ] {
            if v == 0 {
                return Err(format!("{name} must be > 0"));
            }
        }
        if self.d3 >= self.d2 {
            return Err(format!("timing.d3 ({}) must be < timing.d2 ({})", self.d3, self.d2));
        }
        Ok(())
    }
}

/// Scenario-level timing: any field left out is derived from the mean delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d3: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_announce: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_echo: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutex_rto: Option<u64>,
}

impl TimingConfig {
    pub fn resolve(&self, mean_delay: u64) -> TimingParams {
        let base = TimingParams::for_mean_delay(mean_delay);
        let d = self.d.unwrap_or(base.d);
        let t_announce = self.t_announce.unwrap_or(base.t_announce);
        let t_echo = self.t_echo.unwrap_or(base.t_echo);
        TimingParams {
            d,
            d1: self.d1.unwrap_or(t_announce + t_echo + d),
            d2: self.d2.unwrap_or(base.d2),
            d3: self.d3.unwrap_or(base.d3),
            t_announce,
            t_echo,
            mutex_rto: self.mutex_rto.unwrap_or(base.mutex_rto),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_at_100ms() {
        let t = TimingParams::for_mean_delay(100);
        assert_eq!((t.d, t.d1, t.d2, t.d3), (400, 2000, 60_000, 1000));
        assert_eq!((t.t_announce, t.t_echo), (800, 800));
        t.validate().unwrap();
    }

    #[test]
    fn d3_must_be_below_d2() {
        let mut t = TimingParams::for_mean_delay(100);
        t.d3 = t.d2;
        assert!(t.validate().unwrap_err().contains("d3"));
        t.d3 = 1;
        t.d = 0;
        assert!(t.validate().unwrap_err().contains("timing.d "));
    }

    #[test]
    fn overrides_feed_derived_fields() {
        let cfg = TimingConfig {
            d: Some(1000),
            ..Default::default()
        };
        let t = cfg.resolve(100);
        assert_eq!(t.d, 1000);
        assert_eq!(t.d1, 800 + 800 + 1000);
    }
}
