use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rc::{STEPS_PER_DAY, STEP_HOURS};
use crate::error::{Error, Result};

/// Setpoints, occupancy windows and peak hours. Times are hours of day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    pub setpoint_occupied: f64,
    pub setpoint_unoccupied: f64,
    pub deadband: f64,
    pub depart_earliest: f64,
    pub depart_latest: f64,
    pub arrive_earliest: f64,
    pub arrive_latest: f64,
    pub peak_start: f64,
    pub peak_end: f64,
    /// Persons present while the home is occupied.
    pub occupants: f64,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self {
            setpoint_occupied: 24.0,
            setpoint_unoccupied: 32.0,
            deadband: 0.5,
            depart_earliest: 7.0,
            depart_latest: 10.0,
            arrive_earliest: 16.0,
            arrive_latest: 20.0,
            peak_start: 15.0,
            peak_end: 18.0,
            occupants: 3.0,
        }
    }
}

impl SchedulePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.deadband > 0.0) {
            return Err(Error::config("schedule.deadband", "must be > 0"));
        }
        if !(0.0 <= self.depart_earliest
            && self.depart_earliest <= self.depart_latest
            && self.depart_latest < self.arrive_earliest
            && self.arrive_earliest <= self.arrive_latest
            && self.arrive_latest <= 24.0)
        {
            return Err(Error::config(
                "schedule.depart_latest",
                "depart window must precede arrive window within one day",
            ));
        }
        if !(self.peak_start < self.peak_end) {
            return Err(Error::config("schedule.peak_end", "peak window is empty"));
        }
        if !(self.occupants >= 0.0) {
            return Err(Error::config("schedule.occupants", "must be >= 0"));
        }
        Ok(())
    }

    pub fn setpoint(&self, occupied: bool) -> f64 {
        if occupied {
            self.setpoint_occupied
        } else {
            self.setpoint_unoccupied
        }
    }

    pub fn in_peak(&self, hour: f64) -> bool {
        hour >= self.peak_start && hour < self.peak_end
    }
}

/// Departure and arrival hour for one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayPlan {
    pub depart: f64,
    pub arrive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySchedule {
    pub days: Vec<DayPlan>,
    /// Persons present, per 15-minute step.
    pub occ: Vec<f64>,
}

fn on_grid(hour: f64) -> f64 {
    (hour / STEP_HOURS).round() * STEP_HOURS
}

/// Draws a depart/arrive pair per day, rounded to the 15-minute grid.
/// Occupants are home before departure and from arrival on.
pub fn occupancy_schedule(days: usize, policy: &SchedulePolicy, rng: &mut ChaCha8Rng) -> OccupancySchedule {
    let mut plans = Vec::with_capacity(days);
    let mut occ = Vec::with_capacity(days * STEPS_PER_DAY);
    for _ in 0..days {
        let depart = on_grid(rng.gen_range(policy.depart_earliest..=policy.depart_latest));
        let arrive = on_grid(rng.gen_range(policy.arrive_earliest..=policy.arrive_latest));
        plans.push(DayPlan { depart, arrive });
        for k in 0..STEPS_PER_DAY {
            let hour = k as f64 * STEP_HOURS;
            let away = hour >= depart && hour < arrive;
            occ.push(if away { 0.0 } else { policy.occupants });
        }
    }
    OccupancySchedule { days: plans, occ }
}
