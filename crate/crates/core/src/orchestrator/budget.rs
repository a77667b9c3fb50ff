use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Names of the capped resources, as used in reports and CLI overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetName {
    MaxRepairLoops,
    MaxCleanReplayRepairLoops,
    MaxStrongestTestRepairs,
    MaxLlmStructuredRetries,
    MaxRepairLlmStructuredRetries,
    MaxShellCommands,
    MaxTotalWallTimeS,
}

impl BudgetName {
    pub const ALL: [BudgetName; 7] = [
        BudgetName::MaxRepairLoops,
        BudgetName::MaxCleanReplayRepairLoops,
        BudgetName::MaxStrongestTestRepairs,
        BudgetName::MaxLlmStructuredRetries,
        BudgetName::MaxRepairLlmStructuredRetries,
        BudgetName::MaxShellCommands,
        BudgetName::MaxTotalWallTimeS,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BudgetName::MaxRepairLoops => "max_repair_loops",
            BudgetName::MaxCleanReplayRepairLoops => "max_clean_replay_repair_loops",
            BudgetName::MaxStrongestTestRepairs => "max_strongest_test_repairs",
            BudgetName::MaxLlmStructuredRetries => "max_llm_structured_retries",
            BudgetName::MaxRepairLlmStructuredRetries => "max_repair_llm_structured_retries",
            BudgetName::MaxShellCommands => "max_shell_commands",
            BudgetName::MaxTotalWallTimeS => "max_total_wall_time_s",
        }
    }
}

impl fmt::Display for BudgetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BudgetName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BudgetName::ALL.into_iter().find(|b| b.as_str() == s).ok_or_else(|| format!("unknown budget `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetCaps {
    pub max_repair_loops: u64,
    pub max_clean_replay_repair_loops: u64,
    pub max_strongest_test_repairs: u64,
    pub max_llm_structured_retries: u64,
    pub max_repair_llm_structured_retries: u64,
    pub max_shell_commands: u64,
    pub max_total_wall_time_s: u64,
}

impl Default for BudgetCaps {
    fn default() -> Self {
        Self {
            max_repair_loops: 20,
            max_clean_replay_repair_loops: 3,
            max_strongest_test_repairs: 5,
            max_llm_structured_retries: 5,
            max_repair_llm_structured_retries: 5,
            max_shell_commands: 80,
            max_total_wall_time_s: 3600,
        }
    }
}

impl BudgetCaps {
    pub fn get(&self, name: BudgetName) -> u64 {
        match name {
            BudgetName::MaxRepairLoops => self.max_repair_loops,
            BudgetName::MaxCleanReplayRepairLoops => self.max_clean_replay_repair_loops,
            BudgetName::MaxStrongestTestRepairs => self.max_strongest_test_repairs,
            BudgetName::MaxLlmStructuredRetries => self.max_llm_structured_retries,
            BudgetName::MaxRepairLlmStructuredRetries => self.max_repair_llm_structured_retries,
            BudgetName::MaxShellCommands => self.max_shell_commands,
            BudgetName::MaxTotalWallTimeS => self.max_total_wall_time_s,
        }
    }

    fn slot(&mut self, name: BudgetName) -> &mut u64 {
        match name {
            BudgetName::MaxRepairLoops => &mut self.max_repair_loops,
            BudgetName::MaxCleanReplayRepairLoops => &mut self.max_clean_replay_repair_loops,
            BudgetName::MaxStrongestTestRepairs => &mut self.max_strongest_test_repairs,
            BudgetName::MaxLlmStructuredRetries => &mut self.max_llm_structured_retries,
            BudgetName::MaxRepairLlmStructuredRetries => &mut self.max_repair_llm_structured_retries,
            BudgetName::MaxShellCommands => &mut self.max_shell_commands,
            BudgetName::MaxTotalWallTimeS => &mut self.max_total_wall_time_s,
        }
    }

    /// Overrides one cap. Values must be positive and at most twice the
    /// default so that runs stay bounded.
    pub fn set(&mut self, name: BudgetName, value: u64) -> Result<(), String> {
        let max = BudgetCaps::default().get(name) * 2;
        if value == 0 || value > max {
            return Err(format!("{name} must be between 1 and {max}, got {value}"));
        }
        *self.slot(name) = value;
        Ok(())
    }
}

/// Spent counters mirroring [`BudgetCaps`]. Wall time is in seconds since
/// pipeline start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpent {
    pub max_repair_loops: u64,
    pub max_clean_replay_repair_loops: u64,
    pub max_strongest_test_repairs: u64,
    pub max_llm_structured_retries: u64,
    /// Attempts in the current repair round.
    pub max_repair_llm_structured_retries: u64,
    pub max_shell_commands: u64,
    pub max_total_wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetEvent {
    RepairRound,
    CleanReplayRound,
    StrongestRepair,
    PlanRetry,
    RepairRetry,
    ShellCommand,
    /// Absolute seconds elapsed since the pipeline started.
    WallTick(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhausted(pub BudgetName);

impl fmt::Display for Exhausted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "budget exhausted: {}", self.0)
    }
}

impl std::error::Error for Exhausted {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub caps: BudgetCaps,
    pub spent: BudgetSpent,
    /// Repair-backend attempts over all rounds (the cap is per round).
    pub repair_retries_total: u64,
}

impl BudgetLedger {
    pub fn new(caps: BudgetCaps) -> Self {
        Self { caps, ..Self::default() }
    }

    pub fn charge(&self, event: BudgetEvent) -> Result<Self, Exhausted> {
        charge_budget(self, event)
    }

    pub fn remaining(&self, name: BudgetName) -> u64 {
        let spent = match name {
            BudgetName::MaxRepairLoops => self.spent.max_repair_loops,
            BudgetName::MaxCleanReplayRepairLoops => self.spent.max_clean_replay_repair_loops,
            BudgetName::MaxStrongestTestRepairs => self.spent.max_strongest_test_repairs,
            BudgetName::MaxLlmStructuredRetries => self.spent.max_llm_structured_retries,
            BudgetName::MaxRepairLlmStructuredRetries => self.spent.max_repair_llm_structured_retries,
            BudgetName::MaxShellCommands => self.spent.max_shell_commands,
            BudgetName::MaxTotalWallTimeS => self.spent.max_total_wall_time_s.ceil() as u64,
        };
        self.caps.get(name).saturating_sub(spent)
    }

    /// Every spent counter is within its cap.
    pub fn within_caps(&self) -> bool {
        let (c, s) = (&self.caps, &self.spent);
        s.max_repair_loops <= c.max_repair_loops
            && s.max_clean_replay_repair_loops <= c.max_clean_replay_repair_loops
            && s.max_strongest_test_repairs <= c.max_strongest_test_repairs
            && s.max_llm_structured_retries <= c.max_llm_structured_retries
            && s.max_repair_llm_structured_retries <= c.max_repair_llm_structured_retries
            && s.max_shell_commands <= c.max_shell_commands
            && s.max_total_wall_time_s <= c.max_total_wall_time_s as f64
    }
}

fn bump(counter: &mut u64, cap: u64, name: BudgetName) -> Result<(), Exhausted> {
    if *counter >= cap {
        return Err(Exhausted(name));
    }
    *counter += 1;
    Ok(())
}

/// Charges one event. Pure: the input ledger is never modified, and an
/// exhausted charge leaves nothing to observe past the cap.
pub fn charge_budget(ledger: &BudgetLedger, event: BudgetEvent) -> Result<BudgetLedger, Exhausted> {
    let mut next = *ledger;
    let (caps, spent) = (&next.caps, &mut next.spent);
    match event {
        BudgetEvent::RepairRound => {
            bump(&mut spent.max_repair_loops, caps.max_repair_loops, BudgetName::MaxRepairLoops)?;
            spent.max_repair_llm_structured_retries = 0;
        }
        BudgetEvent::CleanReplayRound => bump(
            &mut spent.max_clean_replay_repair_loops,
            caps.max_clean_replay_repair_loops,
            BudgetName::MaxCleanReplayRepairLoops,
        )?,
        BudgetEvent::StrongestRepair => {
            bump(
                &mut spent.max_strongest_test_repairs,
                caps.max_strongest_test_repairs,
                BudgetName::MaxStrongestTestRepairs,
            )?;
            spent.max_repair_llm_structured_retries = 0;
        }
        BudgetEvent::PlanRetry => bump(
            &mut spent.max_llm_structured_retries,
            caps.max_llm_structured_retries,
            BudgetName::MaxLlmStructuredRetries,
        )?,
        BudgetEvent::RepairRetry => {
            bump(
                &mut spent.max_repair_llm_structured_retries,
                caps.max_repair_llm_structured_retries,
                BudgetName::MaxRepairLlmStructuredRetries,
            )?;
            next.repair_retries_total += 1;
        }
        BudgetEvent::ShellCommand => {
            bump(&mut spent.max_shell_commands, caps.max_shell_commands, BudgetName::MaxShellCommands)?
        }
        BudgetEvent::WallTick(elapsed) => {
            if elapsed > caps.max_total_wall_time_s as f64 {
                return Err(Exhausted(BudgetName::MaxTotalWallTimeS));
            }
            spent.max_total_wall_time_s = spent.max_total_wall_time_s.max(elapsed);
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn charge_n(mut l: BudgetLedger, e: BudgetEvent, n: usize) -> Result<BudgetLedger, Exhausted> {
        for _ in 0..n {
            l = charge_budget(&l, e)?;
        }
        Ok(l)
    }

    #[test]
    fn repair_rounds_cap_at_twenty() {
        let l = charge_n(BudgetLedger::default(), BudgetEvent::RepairRound, 20).unwrap();
        assert_eq!(l.spent.max_repair_loops, 20);
        assert_eq!(charge_budget(&l, BudgetEvent::RepairRound), Err(Exhausted(BudgetName::MaxRepairLoops)));
    }

    #[test]
    fn shell_command_81_is_exhausted() {
        let l = charge_n(BudgetLedger::default(), BudgetEvent::ShellCommand, 80).unwrap();
        assert_eq!(charge_budget(&l, BudgetEvent::ShellCommand), Err(Exhausted(BudgetName::MaxShellCommands)));
        assert!(l.within_caps());
    }

    #[test]
    fn wall_tick_past_cap() {
        let l = charge_budget(&BudgetLedger::default(), BudgetEvent::WallTick(3599.5)).unwrap();
        assert_eq!(charge_budget(&l, BudgetEvent::WallTick(3600.1)), Err(Exhausted(BudgetName::MaxTotalWallTimeS)));
    }

    #[test]
    fn repair_retries_reset_per_round() {
        let l = charge_budget(&BudgetLedger::default(), BudgetEvent::RepairRound).unwrap();
        let l = charge_n(l, BudgetEvent::RepairRetry, 5).unwrap();
        assert!(charge_budget(&l, BudgetEvent::RepairRetry).is_err());
        let l = charge_budget(&l, BudgetEvent::RepairRound).unwrap();
        let l = charge_budget(&l, BudgetEvent::RepairRetry).unwrap();
        assert_eq!(l.repair_retries_total, 6);
    }

    #[test]
    fn overrides_are_bounded() {
        let mut caps = BudgetCaps::default();
        assert!(caps.set(BudgetName::MaxRepairLoops, 40).is_ok());
        assert!(caps.set(BudgetName::MaxRepairLoops, 41).is_err());
        assert!(caps.set(BudgetName::MaxShellCommands, 0).is_err());
        assert_eq!("max_shell_commands".parse::<BudgetName>(), Ok(BudgetName::MaxShellCommands));
    }
}
