#![allow(dead_code)]

pub mod enumerate;

use coordsim::net::{DelayDistribution, Region};
use coordsim::scenario::{load_bundled, AgentSpec, BehaviorSpec};
use coordsim::types::{Pid, SimTime, ZoneName};
use coordsim::Scenario;

pub fn fourway(seed: u64) -> Scenario {
    let mut sc = load_bundled("fourway").unwrap();
    sc.master_seed = seed;
    sc
}

pub fn zone_names(n: usize) -> Vec<ZoneName> {
    (0..n).map(|i| ZoneName::from(format!("Z{i}").as_str())).collect()
}

/// `n` stress agents parked well away from the intersection.
pub fn stress_scenario(
    seed: u64,
    n: u32,
    zones: Vec<ZoneName>,
    requests: u32,
    max_zones: usize,
    loss_rate: f64,
    delay: DelayDistribution,
) -> Scenario {
    let mut sc = Scenario::empty("stress");
    sc.master_seed = seed;
    sc.net.loss_rate = loss_rate;
    sc.net.delay_distribution = delay;
    sc.agents = (0..n)
        .map(|i| AgentSpec {
            pid: Pid(i),
            x: 20.0 + i as f64,
            y: 20.0,
            start_at: SimTime::ZERO,
            behavior: BehaviorSpec::Stress {
                zones: zones.clone(),
                requests,
                max_zones,
                hold_ms: 300,
                think_ms: 300,
            },
        })
        .collect();
    sc
}

pub fn probe(pid: u32, x: f64, y: f64, region: Region, count: u32) -> AgentSpec {
    AgentSpec {
        pid: Pid(pid),
        x,
        y,
        start_at: SimTime::ZERO,
        behavior: BehaviorSpec::GeocastProbe {
            region,
            count,
            period_ms: 150,
        },
    }
}

pub fn idle(pid: u32, x: f64, y: f64) -> AgentSpec {
    AgentSpec {
        pid: Pid(pid),
        x,
        y,
        start_at: SimTime::ZERO,
        behavior: BehaviorSpec::Idle,
    }
}
