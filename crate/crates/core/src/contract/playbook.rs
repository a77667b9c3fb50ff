use serde::{Deserialize, Serialize};

use crate::repair::{FailureSignature, RepairDelta};

/// Entries kept per run; older ones are dropped first.
pub const MAX_PLAYBOOK_ENTRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOutcome {
    Fixed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybookEntry {
    pub signature: String,
    pub fix_summary: String,
    pub outcome: RepairOutcome,
    pub round: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailurePlaybook {
    pub entries: Vec<PlaybookEntry>,
}

impl FailurePlaybook {
    /// Appends an entry, evicting the oldest beyond [`MAX_PLAYBOOK_ENTRIES`].
    pub fn push(&mut self, entry: PlaybookEntry) {
        debug_assert!(self.entries.last().is_none_or(|l| l.round < entry.round), "rounds must increase");
        self.entries.push(entry);
        if self.entries.len() > MAX_PLAYBOOK_ENTRIES {
            let excess = self.entries.len() - MAX_PLAYBOOK_ENTRIES;
            self.entries.drain(..excess);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most recent `n` entries, oldest first.
    pub fn recent(&self, n: usize) -> &[PlaybookEntry] {
        &self.entries[self.entries.len().saturating_sub(n)..]
    }
}

/// Records the outcome of one repair round.
pub fn record_repair_knowledge(
    playbook: &FailurePlaybook,
    signature: &FailureSignature,
    delta: Option<&RepairDelta>,
    outcome: RepairOutcome,
    round: usize,
) -> FailurePlaybook {
    let mut next = playbook.clone();
    next.push(PlaybookEntry {
        signature: signature.summary(),
        fix_summary: delta.map(RepairDelta::summary).unwrap_or_else(|| "no acceptable delta".into()),
        outcome,
        round,
    });
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(round: usize) -> PlaybookEntry {
        PlaybookEntry { signature: format!("s{round}"), fix_summary: "f".into(), outcome: RepairOutcome::Fixed, round }
    }

    #[test]
    fn ring_keeps_last_twenty() {
        let mut p = FailurePlaybook::default();
        for r in 1..=21 {
            p.push(entry(r));
        }
        assert_eq!(p.len(), 20);
        assert_eq!(p.entries[0].round, 2);
        assert_eq!(p.entries[19].round, 21);
        assert_eq!(p.recent(2).iter().map(|e| e.round).collect::<Vec<_>>(), [20, 21]);
    }

    #[test]
    fn serialized_shape() {
        let mut p = FailurePlaybook::default();
        p.push(PlaybookEntry {
            signature: "missing_dependency@minimal/0: No module named 'leftpad'".into(),
            fix_summary: "insert_commands install@1".into(),
            outcome: RepairOutcome::Abandoned,
            round: 1,
        });
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["entries"][0]["outcome"], "abandoned");
        assert_eq!(v["entries"][0]["round"], 1);
    }
}
