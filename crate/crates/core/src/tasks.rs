//! Task identifiers shared by the loss assignment, the DWA scheduler, and
//! the joint training step.

/// The six trainable objectives: the main post-edit generation task plus
/// five auxiliary subtasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    /// Main sequence-to-sequence post-edit generation.
    Pe,
    /// Part-of-speech tagging over encoder positions.
    Pos,
    /// Named-entity tagging over encoder positions.
    Ner,
    /// Masked-language-model prediction at masked encoder positions.
    Mlm,
    /// Keep/Translate tagging over encoder positions.
    KtEnc,
    /// Keep/Translate tagging over post-edit (decoder) positions.
    KtDec,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Pe,
        TaskId::Pos,
        TaskId::Ner,
        TaskId::Mlm,
        TaskId::KtEnc,
        TaskId::KtDec,
    ];

    /// Stable index into per-task arrays.
    pub fn index(self) -> usize {
        match self {
            TaskId::Pe => 0,
            TaskId::Pos => 1,
            TaskId::Ner => 2,
            TaskId::Mlm => 3,
            TaskId::KtEnc => 4,
            TaskId::KtDec => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Pe => "pe",
            TaskId::Pos => "pos",
            TaskId::Ner => "ner",
            TaskId::Mlm => "mlm",
            TaskId::KtEnc => "kt_enc",
            TaskId::KtDec => "kt_dec",
        }
    }
}

/// Which tasks participate in a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSet([bool; 6]);

impl TaskSet {
    /// Only the main generation task (curriculum Steps 1–3, and the
    /// "Vanilla" fine-tune arm).
    pub fn main_only() -> TaskSet {
        let mut s = TaskSet([false; 6]);
        s.0[TaskId::Pe.index()] = true;
        s
    }

    /// Main task plus all five subtasks.
    pub fn all() -> TaskSet {
        TaskSet([true; 6])
    }

    pub fn with(mut self, task: TaskId, enabled: bool) -> TaskSet {
        self.0[task.index()] = enabled;
        self
    }

    pub fn contains(&self, task: TaskId) -> bool {
        self.0[task.index()]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = TaskId> + '_ {
        TaskId::ALL.into_iter().filter(|t| self.contains(*t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_stable_and_dense() {
        for (i, t) in TaskId::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
        }
    }

    #[test]
    fn task_sets_toggle() {
        let s = TaskSet::main_only();
        assert_eq!(s.count(), 1);
        assert!(s.contains(TaskId::Pe));
        let s = s.with(TaskId::Mlm, true);
        assert_eq!(s.count(), 2);
        assert_eq!(TaskSet::all().count(), 6);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![TaskId::Pe, TaskId::Mlm]);
    }
}
