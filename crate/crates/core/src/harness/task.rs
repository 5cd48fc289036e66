//! Synthetic hint-revealing task.
//!
//! A prompt names one of five categories, one per functional kind. The
//! hidden answer is drawn uniformly and is only observable after the policy
//! emits the functional token of the category's kind: the environment then
//! appends the answer's digit to the context as an observation. The policy
//! answers by emitting a single envelope token such as `<answer>2</answer>`.
//!
//! Observation tokens are context only; they are not part of the policy's
//! generated tokens and carry no log-probability.

use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::PolicyParameters;
use crate::reward::ModelOutput;
use crate::trajectory::{answer_envelope, build_trajectory, TemplateTable};
use crate::vocab::{FunctionalKind, TokenId, Vocabulary};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const FILLERS: [&str; 2] = ["hmm", "so"];

/// Category marker for a kind.
pub fn category_surface(kind: FunctionalKind) -> String {
    format!("[{}]", kind.name().to_lowercase())
}

/// Token layout of the hint task.
#[derive(Debug, Clone)]
pub struct HintWorld {
    pub vocab: Vocabulary,
    pub bos: TokenId,
    pub eos: TokenId,
    n_answers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTask {
    pub prompt: Vec<TokenId>,
    pub required_kind: FunctionalKind,
    pub hidden_answer: TokenId,
    pub gold_answer_text: String,
}

/// Running context of one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeContext {
    /// Prompt, generated tokens and observations, in order.
    pub tokens: Vec<TokenId>,
    pub revealed: bool,
}

impl EpisodeContext {
    pub fn new(task: &SyntheticTask) -> Self {
        EpisodeContext {
            tokens: task.prompt.clone(),
            revealed: false,
        }
    }
}

/// Appends `emitted`; if it is the task's required functional token and the
/// hint has not been shown yet, also appends the hidden answer.
pub fn env_step(
    world: &HintWorld,
    task: &SyntheticTask,
    emitted: TokenId,
    mut ctx: EpisodeContext,
) -> Result<EpisodeContext> {
    world.vocab.classify(emitted)?;
    ctx.tokens.push(emitted);
    if !ctx.revealed && emitted == world.vocab.functional_id(task.required_kind) {
        ctx.tokens.push(task.hidden_answer);
        ctx.revealed = true;
    }
    Ok(ctx)
}

/// One finished episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub prompt_len: usize,
    /// Policy-generated tokens.
    pub generated: Vec<TokenId>,
    /// Conditioning token of each generated token.
    pub contexts: Vec<TokenId>,
    /// Full context including observations.
    pub context: EpisodeContext,
}

impl Episode {
    pub fn revealed(&self) -> bool {
        self.context.revealed
    }

    /// Reward-facing view: rendered continuation (observations included),
    /// functional count and length over generated tokens only.
    pub fn output(&self, vocab: &Vocabulary) -> Result<ModelOutput> {
        Ok(ModelOutput {
            rendered_text: vocab.decode(&self.context.tokens[self.prompt_len..])?,
            n_func: vocab.functional_positions(&self.generated)?.len(),
            length: self.generated.len(),
        })
    }
}

impl HintWorld {
    pub fn new(n_answers: usize) -> Result<Self> {
        if !(2..=10).contains(&n_answers) {
            return Err(Error::Config(format!("n_answers must be in 2..=10, got {n_answers}")));
        }
        let mut text: Vec<String> = FunctionalKind::ALL.iter().map(|&k| category_surface(k)).collect();
        text.extend((0..n_answers).map(|d| d.to_string()));
        text.extend((0..n_answers).map(|d| answer_envelope(&d.to_string())));
        text.extend(FILLERS.iter().map(|s| s.to_string()));
        let vocab = Vocabulary::build(&text, &[BOS.to_string(), EOS.to_string()])?;
        Ok(HintWorld {
            bos: vocab.id(BOS)?,
            eos: vocab.id(EOS)?,
            vocab,
            n_answers,
        })
    }

    pub fn n_answers(&self) -> usize {
        self.n_answers
    }

    pub fn category(&self, kind: FunctionalKind) -> TokenId {
        TokenId(kind.ordinal())
    }

    pub fn digit(&self, d: usize) -> TokenId {
        TokenId(5 + d)
    }

    pub fn answer_token(&self, d: usize) -> TokenId {
        TokenId(5 + self.n_answers + d)
    }

    pub fn task(&self, kind: FunctionalKind, answer: usize) -> SyntheticTask {
        SyntheticTask {
            prompt: vec![self.bos, self.category(kind)],
            required_kind: kind,
            hidden_answer: self.digit(answer),
            gold_answer_text: answer.to_string(),
        }
    }

    /// Every (category, answer) combination.
    pub fn all_tasks(&self) -> Vec<SyntheticTask> {
        FunctionalKind::ALL
            .iter()
            .flat_map(|&k| (0..self.n_answers).map(move |d| (k, d)))
            .map(|(k, d)| self.task(k, d))
            .collect()
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> SyntheticTask {
        let kind = FunctionalKind::ALL[rng.gen_range(0..5)];
        self.task(kind, rng.gen_range(0..self.n_answers))
    }

    pub fn initial_policy(&self) -> PolicyParameters {
        PolicyParameters::zeros(self.vocab.len(), self.bos).expect("non-empty vocabulary")
    }

    /// Samples an episode from `params`, stopping at `<eos>` or `max_len`
    /// generated tokens.
    pub fn sample_episode<R: Rng + ?Sized>(
        &self,
        params: &PolicyParameters,
        task: &SyntheticTask,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        let mut ctx = EpisodeContext::new(task);
        let mut generated = Vec::with_capacity(max_len);
        let mut contexts = Vec::with_capacity(max_len);
        while generated.len() < max_len {
            let prev = *ctx.tokens.last().unwrap_or(&params.bos());
            let t = params.sample_next(prev, rng)?;
            generated.push(t);
            contexts.push(prev);
            ctx = env_step(self, task, t, ctx)?;
            if t == self.eos {
                break;
            }
        }
        Ok(Episode {
            prompt_len: task.prompt.len(),
            generated,
            contexts,
            context: ctx,
        })
    }

    /// Replays a fixed token script through the environment.
    pub fn replay(&self, task: &SyntheticTask, script: &[TokenId]) -> Result<Episode> {
        let mut ctx = EpisodeContext::new(task);
        let mut contexts = Vec::with_capacity(script.len());
        for &t in script {
            contexts.push(*ctx.tokens.last().unwrap_or(&self.bos));
            ctx = env_step(self, task, t, ctx)?;
        }
        Ok(Episode {
            prompt_len: task.prompt.len(),
            generated: script.to_vec(),
            contexts,
            context: ctx,
        })
    }

    /// Supervised demonstration: the bare trajectory (functional token, then
    /// the enveloped answer) followed by `<eos>`, replayed through the
    /// environment so the hint appears in the context.
    pub fn demonstration(&self, task: &SyntheticTask) -> Result<Episode> {
        let prompt = self.vocab.surface(self.category(task.required_kind))?;
        let t = build_trajectory(
            &TemplateTable::bare(),
            prompt,
            &[task.required_kind],
            &task.gold_answer_text,
            0,
        );
        let mut script = self.vocab.encode(&t.render_response())?;
        script.push(self.eos);
        self.replay(task, &script)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{composite_reward, RewardConfig};

    #[test]
    fn layout() {
        let w = HintWorld::new(4).unwrap();
        assert_eq!(w.vocab.len(), 5 + 4 + 4 + 2 + 2 + 5);
        assert_eq!(w.vocab.surface(w.category(FunctionalKind::Arrow)).unwrap(), "[arrow]");
        assert_eq!(w.vocab.surface(w.digit(3)).unwrap(), "3");
        assert_eq!(w.vocab.surface(w.answer_token(1)).unwrap(), "<answer>1</answer>");
        assert_eq!(w.all_tasks().len(), 20);
        assert!(HintWorld::new(1).is_err());
    }

    #[test]
    fn reveal_mechanism() {
        let w = HintWorld::new(4).unwrap();
        let task = w.task(FunctionalKind::Line, 2);
        let line = w.vocab.functional_id(FunctionalKind::Line);
        let shape = w.vocab.functional_id(FunctionalKind::Shape);

        let ctx = env_step(&w, &task, line, EpisodeContext::new(&task)).unwrap();
        assert_eq!(&ctx.tokens[2..], &[line, w.digit(2)]);

        let ctx = env_step(&w, &task, shape, EpisodeContext::new(&task)).unwrap();
        assert_eq!(&ctx.tokens[2..], &[shape]);
        assert!(!ctx.revealed);

        let ctx = env_step(&w, &task, line, EpisodeContext::new(&task)).unwrap();
        let ctx = env_step(&w, &task, line, ctx).unwrap();
        assert_eq!(&ctx.tokens[2..], &[line, w.digit(2), line]);
        assert!(env_step(&w, &task, TokenId(99), ctx).is_err());
    }

    #[test]
    fn demonstration_is_optimal() {
        let w = HintWorld::new(4).unwrap();
        let cfg = RewardConfig {
            l_max: 4,
            len_buffer: 4,
            tau_spam: 2,
            ..Default::default()
        };
        for task in w.all_tasks() {
            let ep = w.demonstration(&task).unwrap();
            assert_eq!(ep.generated.len(), 3);
            assert!(ep.revealed());
            assert_eq!(ep.contexts[1], task.hidden_answer);
            let b = composite_reward(&ep.output(&w.vocab).unwrap(), &task.gold_answer_text, &cfg);
            assert_eq!(b.total, cfg.max_total());
        }
    }
}
