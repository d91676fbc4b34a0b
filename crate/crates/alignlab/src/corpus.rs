//! Deterministic synthetic multitask corpus.
//!
//! A 64-symbol toy text world plus a codebook "TTS": token sequences are
//! rendered into continuous frame matrices (3-5 frames per token, seeded
//! per-speaker offsets, small gaussian noise). Translation is a fixed
//! bijection over the base alphabet followed by sequence reversal, so ST
//! quality is exactly measurable. Question answering uses a fixed seeded
//! key -> value table of 64 entries.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{derive_sample_seed, derive_seed, Stream};

pub type Token = u16;

pub const BASE_TOKENS: usize = 64;
pub const NUM_SPECIALS: usize = 10;
pub const VOCAB_SIZE: usize = BASE_TOKENS + NUM_SPECIALS;

// Special token ids occupy the tail of the id space.
pub const HUMAN: Token = 64;
pub const START_AUDIO: Token = 65;
pub const END_AUDIO: Token = 66;
pub const TASK_ASR: Token = 67;
pub const TASK_ST: Token = 68;
pub const TASK_SQA: Token = 69;
pub const TASK_QA: Token = 70;
pub const ASSISTANT: Token = 71;
pub const END_OF_TEXT: Token = 72;
pub const PAD: Token = 73;

pub const NUM_SPEAKERS: usize = 8;
pub const DUR_MIN: usize = 3;
pub const DUR_MAX: usize = 5;
pub const NOISE_RATIO: f32 = 0.05;
const KV_VALUE_LEN: usize = 4;
const KV_QUERY_REPEAT: usize = 3;

/// Token <-> id mapping for the 64 printable base symbols plus the
/// special-token protocol markers.
pub struct Vocabulary {
    base: Vec<char>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Vocabulary {
        let mut base: Vec<char> = ('a'..='z').collect();
        base.extend('A'..='Z');
        base.extend('0'..='9');
        base.push('+');
        base.push('-');
        debug_assert_eq!(base.len(), BASE_TOKENS);
        Vocabulary { base }
    }

    pub fn size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn is_base(id: Token) -> bool {
        (id as usize) < BASE_TOKENS
    }

    pub fn id_of_char(&self, c: char) -> Option<Token> {
        self.base.iter().position(|&b| b == c).map(|i| i as Token)
    }

    pub fn tokens_of_str(&self, s: &str) -> Vec<Token> {
        s.chars().filter_map(|c| self.id_of_char(c)).collect()
    }

    pub fn render(&self, tokens: &[Token]) -> String {
        let mut out = String::new();
        for &t in tokens {
            match t {
                HUMAN => out.push_str("<|Human|>"),
                START_AUDIO => out.push_str("<|startofaudio|>"),
                END_AUDIO => out.push_str("<|endofaudio|>"),
                TASK_ASR => out.push_str("<|asr|>"),
                TASK_ST => out.push_str("<|st|>"),
                TASK_SQA => out.push_str("<|sqa|>"),
                TASK_QA => out.push_str("<|qa|>"),
                ASSISTANT => out.push_str("<|Assistant|>"),
                END_OF_TEXT => out.push_str("<|endoftext|>"),
                PAD => out.push_str("<|pad|>"),
                id => out.push(self.base[id as usize]),
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Task {
    Asr,
    St,
    Sqa,
    Qa,
}

impl Task {
    pub fn tag(self) -> u8 {
        match self {
            Task::Asr => 0,
            Task::St => 1,
            Task::Sqa => 2,
            Task::Qa => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Task> {
        Ok(match tag {
            0 => Task::Asr,
            1 => Task::St,
            2 => Task::Sqa,
            3 => Task::Qa,
            _ => return Err(Error::Config(format!("unknown task tag {tag}"))),
        })
    }

    pub fn token(self) -> Token {
        match self {
            Task::Asr => TASK_ASR,
            Task::St => TASK_ST,
            Task::Sqa => TASK_SQA,
            Task::Qa => TASK_QA,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Asr => "asr",
            Task::St => "st",
            Task::Sqa => "sqa",
            Task::Qa => "qa",
        }
    }
}

/// Per-utterance synthetic speech feature sequence (T x d_feat).
#[derive(Clone)]
pub struct FrameMatrix {
    pub frames: Vec<f32>,
    pub t: usize,
    pub d_feat: usize,
    pub source_tokens: Vec<Token>,
    /// Frames per source token; sums to `t`. Kept so frame-level
    /// supervision does not have to re-derive the segmentation.
    pub durations: Vec<usize>,
    pub speaker_id: u32,
    pub noise_seed: u64,
}

impl FrameMatrix {
    /// Source token id of every frame, in order.
    pub fn frame_labels(&self) -> Vec<Token> {
        let mut labels = Vec::with_capacity(self.t);
        for (tok, &dur) in self.source_tokens.iter().zip(&self.durations) {
            for _ in 0..dur {
                labels.push(*tok);
            }
        }
        labels
    }
}

/// One multitask example.
#[derive(Clone)]
pub struct TaskSample {
    pub task: Task,
    pub audio: Option<FrameMatrix>,
    pub prompt_tokens: Vec<Token>,
    pub answer_tokens: Vec<Token>,
    pub sample_id: u64,
}

/// Fixed seeded world: TTS codebook, speaker offsets, translation
/// bijection and the key -> value fact table.
pub struct ToyWorld {
    pub corpus_seed: u64,
    pub d_feat: usize,
    pub codebook: Vec<f32>,
    pub speaker_offsets: Vec<f32>,
    pub sigma_codebook: f32,
    pub pi: Vec<Token>,
    pub pi_inv: Vec<Token>,
    pub kv_values: Vec<Vec<Token>>,
    pub vocab: Vocabulary,
}

/// Sentence spaces for training and held-out data are disjoint by
/// construction: training sentences start on an even token, test
/// sentences on an odd one.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SentenceSpace {
    Train,
    Test,
}

impl ToyWorld {
    pub fn new(corpus_seed: u64, d_feat: usize) -> ToyWorld {
        let mut cb_rng = Stream::new(derive_seed(corpus_seed, "codebook"));
        let codebook: Vec<f32> = (0..BASE_TOKENS * d_feat).map(|_| cb_rng.normal()).collect();
        let mean: f64 = codebook.iter().map(|&x| x as f64).sum::<f64>() / codebook.len() as f64;
        let var: f64 = codebook
            .iter()
            .map(|&x| (x as f64 - mean) * (x as f64 - mean))
            .sum::<f64>()
            / codebook.len() as f64;
        let sigma_codebook = var.sqrt() as f32;

        let mut sp_rng = Stream::new(derive_seed(corpus_seed, "speakers"));
        let speaker_offsets: Vec<f32> = (0..NUM_SPEAKERS * d_feat)
            .map(|_| sp_rng.normal() * 0.3)
            .collect();

        let mut pi: Vec<Token> = (0..BASE_TOKENS as Token).collect();
        let mut pi_rng = Stream::new(derive_seed(corpus_seed, "pi"));
        pi_rng.shuffle(&mut pi);
        let mut pi_inv = vec![0 as Token; BASE_TOKENS];
        for (src, &dst) in pi.iter().enumerate() {
            pi_inv[dst as usize] = src as Token;
        }

        let mut kv_rng = Stream::new(derive_seed(corpus_seed, "kv"));
        let kv_values: Vec<Vec<Token>> = (0..BASE_TOKENS)
            .map(|_| {
                (0..KV_VALUE_LEN)
                    .map(|_| kv_rng.usize_below(BASE_TOKENS) as Token)
                    .collect()
            })
            .collect();

        ToyWorld {
            corpus_seed,
            d_feat,
            codebook,
            speaker_offsets,
            sigma_codebook,
            pi,
            pi_inv,
            kv_values,
            vocab: Vocabulary::new(),
        }
    }

    /// Draw a sentence: uniform over the base alphabet, tokens distinct
    /// within a sentence (resampled against the ones already used, with a
    /// bounded retry budget). Distinctness matters because a repeated
    /// token makes content-addressed copying -- the mechanism both ASR
    /// and ST rest on -- ambiguous about where to resume.
    pub fn sample_sentence(&self, len: usize, space: SentenceSpace, rng: &mut Stream) -> Vec<Token> {
        let start = 2 * rng.usize_below(BASE_TOKENS / 2)
            + match space {
                SentenceSpace::Train => 0,
                SentenceSpace::Test => 1,
            };
        let mut used = [false; BASE_TOKENS];
        used[start] = true;
        let mut out = Vec::with_capacity(len);
        out.push(start as Token);
        for _ in 1..len {
            let mut next = 0 as Token;
            for _ in 0..64 {
                next = rng.usize_below(BASE_TOKENS) as Token;
                if !used[next as usize] {
                    break;
                }
            }
            used[next as usize] = true;
            out.push(next);
        }
        out
    }

    pub fn translate(&self, tokens: &[Token]) -> Vec<Token> {
        tokens.iter().rev().map(|&t| self.pi[t as usize]).collect()
    }

    pub fn untranslate(&self, answer: &[Token]) -> Vec<Token> {
        answer.iter().rev().map(|&t| self.pi_inv[t as usize]).collect()
    }

    pub fn kv_query(&self, key: usize) -> Vec<Token> {
        vec![key as Token; KV_QUERY_REPEAT]
    }

    /// Per-task instruction analog.
    pub fn task_prompt(&self, task: Task) -> Vec<Token> {
        match task {
            Task::Asr => self.vocab.tokens_of_str("rec"),
            Task::St => self.vocab.tokens_of_str("tra"),
            Task::Sqa | Task::Qa => self.vocab.tokens_of_str("ans"),
        }
    }

    /// Render base tokens into frames: dur(t) copies of codebook[t] plus a
    /// speaker offset plus gaussian noise at `noise_ratio * sigma_codebook`.
    pub fn synth_speech_with_noise(
        &self,
        tokens: &[Token],
        speaker_id: u32,
        noise_seed: u64,
        noise_ratio: f32,
    ) -> Result<FrameMatrix> {
        if tokens.is_empty() {
            return Err(Error::Vocabulary("synth_speech of an empty token sequence".into()));
        }
        for &t in tokens {
            if !Vocabulary::is_base(t) {
                return Err(Error::Vocabulary(format!(
                    "special token id {t} cannot be synthesized"
                )));
            }
        }
        if speaker_id as usize >= NUM_SPEAKERS {
            return Err(Error::Vocabulary(format!(
                "speaker id {speaker_id} out of range {NUM_SPEAKERS}"
            )));
        }
        let d = self.d_feat;
        let mut rng = Stream::new(noise_seed);
        let sigma = noise_ratio * self.sigma_codebook;
        let speaker = &self.speaker_offsets[speaker_id as usize * d..(speaker_id as usize + 1) * d];
        let mut frames: Vec<f32> = Vec::new();
        let mut durations = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let dur = DUR_MIN + rng.usize_below(DUR_MAX - DUR_MIN + 1);
            durations.push(dur);
            let code = &self.codebook[t as usize * d..(t as usize + 1) * d];
            for _ in 0..dur {
                for j in 0..d {
                    frames.push(code[j] + speaker[j] + rng.normal() * sigma);
                }
            }
        }
        let t_len = frames.len() / d;
        Ok(FrameMatrix {
            frames,
            t: t_len,
            d_feat: d,
            source_tokens: tokens.to_vec(),
            durations,
            speaker_id,
            noise_seed,
        })
    }

    pub fn synth_speech(&self, tokens: &[Token], speaker_id: u32, noise_seed: u64) -> Result<FrameMatrix> {
        self.synth_speech_with_noise(tokens, speaker_id, noise_seed, NOISE_RATIO)
    }

    pub fn make_task_sample(&self, task: Task, sample_seed: u64, sample_id: u64) -> Result<TaskSample> {
        let mut rng = Stream::new(sample_seed);
        let prompt = self.task_prompt(task);
        let space = if sample_id >= TEST_ID_OFFSET {
            SentenceSpace::Test
        } else {
            SentenceSpace::Train
        };
        let (audio_tokens, prompt_tokens, mut answer_tokens) = match task {
            Task::Asr => {
                let len = 5 + rng.usize_below(16); // 5..=20
                let sent = self.sample_sentence(len, space, &mut rng);
                (Some(sent.clone()), prompt, sent)
            }
            Task::St => {
                let len = 4 + rng.usize_below(7); // 4..=10
                let sent = self.sample_sentence(len, space, &mut rng);
                let answer = self.translate(&sent);
                (Some(sent), prompt, answer)
            }
            Task::Sqa => {
                let key = rng.usize_below(BASE_TOKENS);
                (Some(self.kv_query(key)), prompt, self.kv_values[key].clone())
            }
            Task::Qa => {
                let key = rng.usize_below(BASE_TOKENS);
                let mut p = prompt;
                p.extend(self.kv_query(key));
                (None, p, self.kv_values[key].clone())
            }
        };
        let audio = match audio_tokens {
            Some(tokens) => {
                let speaker = rng.usize_below(NUM_SPEAKERS) as u32;
                let noise_seed = rng.u64();
                Some(self.synth_speech(&tokens, speaker, noise_seed)?)
            }
            None => None,
        };
        answer_tokens.push(END_OF_TEXT);
        Ok(TaskSample {
            task,
            audio,
            prompt_tokens,
            answer_tokens,
            sample_id,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MixName {
    Mix1,
    Mix2,
    Mix3,
}

impl MixName {
    pub fn parse(s: &str) -> Result<MixName> {
        Ok(match s {
            "mix1" => MixName::Mix1,
            "mix2" => MixName::Mix2,
            "mix3" => MixName::Mix3,
            other => return Err(Error::Config(format!("unknown mix name '{other}'"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MixName::Mix1 => "mix1",
            MixName::Mix2 => "mix2",
            MixName::Mix3 => "mix3",
        }
    }

    /// (ASR, ST, SQA) counts at scale 20; other scales multiply by s/20.
    fn base_counts(self) -> (usize, usize, usize) {
        match self {
            MixName::Mix1 => (180, 200, 60),
            MixName::Mix2 => (178, 200, 60),
            MixName::Mix3 => (378, 200, 60),
        }
    }
}

/// Sample-count recipe for one training mix. QA (text-only) count follows
/// the SQA count.
#[derive(Clone, Copy, Debug)]
pub struct DatasetMix {
    pub name: MixName,
    pub seed: u64,
    pub scale: usize,
}

impl DatasetMix {
    pub fn counts(&self) -> [(Task, usize); 4] {
        let (asr, st, sqa) = self.name.base_counts();
        let s = self.scale;
        [
            (Task::Asr, asr * s / 20),
            (Task::St, st * s / 20),
            (Task::Sqa, sqa * s / 20),
            (Task::Qa, sqa * s / 20),
        ]
    }
}

/// Deterministic sample list for a mix: per-task blocks with sequential
/// ids, per-sample seeds derived from (mix seed, id), then one seeded
/// shuffle of the whole list.
pub fn build_mix(world: &ToyWorld, mix: &DatasetMix) -> Result<Vec<TaskSample>> {
    let counts = mix.counts();
    for (task, n) in counts {
        if n == 0 {
            return Err(Error::Config(format!(
                "mix {} scale {} yields zero {} samples",
                mix.name.as_str(),
                mix.scale,
                task.name()
            )));
        }
    }
    let mut samples = Vec::new();
    let mut next_id = 0u64;
    for (task, n) in counts {
        for _ in 0..n {
            let seed = derive_sample_seed(mix.seed, next_id);
            samples.push(world.make_task_sample(task, seed, next_id)?);
            next_id += 1;
        }
    }
    let mut shuffle_rng = Stream::new(derive_seed(mix.seed, "shuffle"));
    shuffle_rng.shuffle(&mut samples);
    Ok(samples)
}

/// Sample ids at or above this offset draw from the held-out sentence
/// space.
pub const TEST_ID_OFFSET: u64 = 1 << 32;

/// Seed-disjoint held-out test split; ids are offset so they can never
/// collide with training ids, and sentences come from the disjoint test
/// sentence space.
pub fn build_test_set(world: &ToyWorld, task: Task, count: usize, seed: u64) -> Result<Vec<TaskSample>> {
    (0..count)
        .map(|i| {
            let id = TEST_ID_OFFSET + i as u64;
            let sample_seed = derive_sample_seed(seed, id);
            world.make_task_sample(task, sample_seed, id)
        })
        .collect()
}

// ── text rendering for LM pretraining ───────────────────────────────────

/// Full prompt-format rendering of a sample's text content (audio region
/// holds the source tokens as text).
pub fn render_prompt_text(
    task: Task,
    audio_text: &[Token],
    prompt: &[Token],
    answer: &[Token],
) -> Vec<Token> {
    let mut seq = vec![HUMAN, START_AUDIO];
    seq.extend_from_slice(audio_text);
    seq.push(END_AUDIO);
    seq.push(task.token());
    seq.extend_from_slice(prompt);
    seq.push(ASSISTANT);
    seq.extend_from_slice(answer);
    if answer.last() != Some(&END_OF_TEXT) {
        seq.push(END_OF_TEXT);
    }
    seq
}

/// Text corpus for LM pretraining: sentences, key-value facts, echo and
/// translation pairs in the prompt format, so the LM "knows" the toy
/// echo/translation rules and the answer table before any audio exists.
/// Speech-slot renderings repeat each source token 3-5 times to mirror
/// the frame rate the alignment module will later feed in.
///
/// The corpus is a curriculum and `pretrain_lm` walks it in order. The
/// copy circuit the echo rule needs forms abruptly only after thousands
/// of clean examples, and the harder "skip a variable-length repeat
/// block" refinement adapts from the formed circuit rather than forming
/// from scratch. The first phase (45% of the corpus) is therefore pure
/// clean-slot echo -- formation is fragile and fails when the phase is
/// diluted or cut short -- and the remainder is a stutter-heavy
/// multitask mix with echo lengths biased long.
pub fn lm_pretrain_corpus(world: &ToyWorld, items: usize, seed: u64) -> Vec<Vec<Token>> {
    let mut rng = Stream::new(seed);
    let phase1 = items * 9 / 20;
    let mut out = Vec::with_capacity(items);
    for i in 0..items {
        let clean_phase = i < phase1;
        // The backbone LM reads the whole toy language, both sentence
        // spaces -- like a text-pretrained LLM, it is not what the
        // held-out alignment split is held out from.
        let space = if rng.usize_below(2) == 0 {
            SentenceSpace::Train
        } else {
            SentenceSpace::Test
        };
        let r = if clean_phase { 0 } else { rng.usize_below(20) };
        let seq = if r < 14 {
            // echo rule (ASR analog): answer repeats the source. It is
            // the only hard skill in the corpus, so it dominates both
            // phases. Phase 1 lengths start at 1 so the answer's first
            // token -- the hardest position, anchored only by
            // START_AUDIO -- gets heavy coverage; phase 2 biases long
            // (max of two draws) where the stutter circuit is weakest.
            let (len, stutter) = if clean_phase {
                (1 + rng.usize_below(20), false)
            } else {
                let len = 1 + rng.usize_below(20).max(rng.usize_below(20));
                (len, r < 12)
            };
            let sent = world.sample_sentence(len, space, &mut rng);
            let slot = if stutter { stutter_tokens(&sent, &mut rng) } else { sent.clone() };
            render_prompt_text(Task::Asr, &slot, &world.task_prompt(Task::Asr), &sent)
        } else if r < 17 {
            // translation rule, stuttered like the phase-2 echo items
            let len = 4 + rng.usize_below(7);
            let sent = world.sample_sentence(len, space, &mut rng);
            let answer = world.translate(&sent);
            let slot = stutter_tokens(&sent, &mut rng);
            render_prompt_text(Task::St, &slot, &world.task_prompt(Task::St), &answer)
        } else {
            // key-value facts, both spoken-slot and text-prompt forms
            let key = rng.usize_below(BASE_TOKENS);
            let query = world.kv_query(key);
            let answer = &world.kv_values[key];
            if rng.usize_below(2) == 0 {
                let slot = stutter_tokens(&query, &mut rng);
                render_prompt_text(Task::Sqa, &slot, &world.task_prompt(Task::Sqa), answer)
            } else {
                let mut p = world.task_prompt(Task::Qa);
                p.extend(query);
                render_prompt_text(Task::Qa, &[], &p, answer)
            }
        };
        out.push(seq);
    }
    out
}

fn stutter_tokens(tokens: &[Token], rng: &mut Stream) -> Vec<Token> {
    let mut out = Vec::with_capacity(tokens.len() * DUR_MAX);
    for &t in tokens {
        let dur = DUR_MIN + rng.usize_below(DUR_MAX - DUR_MIN + 1);
        for _ in 0..dur {
            out.push(t);
        }
    }
    out
}

/// Acknowledgment prefix the chat variant is fine-tuned to emit.
pub fn ack_prefix(vocab: &Vocabulary) -> Vec<Token> {
    vocab.tokens_of_str("Ok-")
}

/// Instruction corpus for the chat fine-tune: prompt-format items whose
/// answers carry the acknowledgment prefix.
pub fn instruction_corpus(world: &ToyWorld, items: usize, seed: u64) -> Vec<Vec<Token>> {
    let mut rng = Stream::new(seed);
    let ack = ack_prefix(&world.vocab);
    let mut out = Vec::with_capacity(items);
    for i in 0..items {
        let stutter = rng.usize_below(2) == 1;
        let space = if rng.usize_below(2) == 0 {
            SentenceSpace::Train
        } else {
            SentenceSpace::Test
        };
        let seq = match i % 3 {
            0 => {
                let key = rng.usize_below(BASE_TOKENS);
                let mut p = world.task_prompt(Task::Qa);
                p.extend(world.kv_query(key));
                let mut answer = ack.clone();
                answer.extend(&world.kv_values[key]);
                render_prompt_text(Task::Qa, &[], &p, &answer)
            }
            1 => {
                let len = 4 + rng.usize_below(7);
                let sent = world.sample_sentence(len, space, &mut rng);
                let mut answer = ack.clone();
                answer.extend(world.translate(&sent));
                let slot = if stutter { stutter_tokens(&sent, &mut rng) } else { sent.clone() };
                render_prompt_text(Task::St, &slot, &world.task_prompt(Task::St), &answer)
            }
            _ => {
                let len = 5 + rng.usize_below(16);
                let sent = world.sample_sentence(len, space, &mut rng);
                let mut answer = ack.clone();
                answer.extend(&sent);
                let slot = if stutter { stutter_tokens(&sent, &mut rng) } else { sent.clone() };
                render_prompt_text(Task::Asr, &slot, &world.task_prompt(Task::Asr), &answer)
            }
        };
        out.push(seq);
    }
    out
}

// ── serialization ───────────────────────────────────────────────────────

const CORPUS_MAGIC: &[u8; 4] = b"MBC1";

pub fn save_samples(path: &Path, samples: &[TaskSample]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CORPUS_MAGIC);
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        buf.push(s.task.tag());
        buf.extend_from_slice(&s.sample_id.to_le_bytes());
        buf.extend_from_slice(&(s.prompt_tokens.len() as u16).to_le_bytes());
        for &t in &s.prompt_tokens {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        buf.extend_from_slice(&(s.answer_tokens.len() as u16).to_le_bytes());
        for &t in &s.answer_tokens {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        match &s.audio {
            None => buf.push(0),
            Some(a) => {
                buf.push(1);
                buf.extend_from_slice(&(a.source_tokens.len() as u16).to_le_bytes());
                for &t in &a.source_tokens {
                    buf.extend_from_slice(&t.to_le_bytes());
                }
                for &d in &a.durations {
                    buf.extend_from_slice(&(d as u16).to_le_bytes());
                }
                buf.extend_from_slice(&a.speaker_id.to_le_bytes());
                buf.extend_from_slice(&a.noise_seed.to_le_bytes());
                buf.extend_from_slice(&(a.t as u32).to_le_bytes());
                buf.extend_from_slice(&(a.d_feat as u32).to_le_bytes());
                for &v in &a.frames {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<TaskSample>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::Dependency(path.display().to_string()))?
        .read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, off: 0 };
    if c.take(4)? != CORPUS_MAGIC {
        return Err(Error::WeightFormat(format!("{}: missing MBC1 magic", path.display())));
    }
    let count = c.u32()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let task = Task::from_tag(c.u8()?)?;
        let sample_id = c.u64()?;
        let np = c.u16()? as usize;
        let prompt_tokens: Vec<Token> = (0..np).map(|_| c.u16()).collect::<Result<_>>()?;
        let na = c.u16()? as usize;
        let answer_tokens: Vec<Token> = (0..na).map(|_| c.u16()).collect::<Result<_>>()?;
        let audio = if c.u8()? == 1 {
            let ns = c.u16()? as usize;
            let source_tokens: Vec<Token> = (0..ns).map(|_| c.u16()).collect::<Result<_>>()?;
            let durations: Vec<usize> = (0..ns).map(|_| c.u16().map(|v| v as usize)).collect::<Result<_>>()?;
            let speaker_id = c.u32()?;
            let noise_seed = c.u64()?;
            let t = c.u32()? as usize;
            let d_feat = c.u32()? as usize;
            let frames: Vec<f32> = (0..t * d_feat).map(|_| c.f32()).collect::<Result<_>>()?;
            Some(FrameMatrix {
                frames,
                t,
                d_feat,
                source_tokens,
                durations,
                speaker_id,
                noise_seed,
            })
        } else {
            None
        };
        samples.push(TaskSample {
            task,
            audio,
            prompt_tokens,
            answer_tokens,
            sample_id,
        });
    }
    Ok(samples)
}

/// Human-readable manifest: sample_id, task, frame count, token counts.
pub fn write_manifest(path: &Path, samples: &[TaskSample]) -> Result<()> {
    let mut out = String::from("sample_id\ttask\tframes\tprompt_tokens\tanswer_tokens\n");
    for s in samples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.sample_id,
            s.task.name(),
            s.audio.as_ref().map(|a| a.t).unwrap_or(0),
            s.prompt_tokens.len(),
            s.answer_tokens.len()
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(Error::WeightFormat("truncated corpus container".into()));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> ToyWorld {
        ToyWorld::new(1234, 16)
    }

    #[test]
    fn zero_noise_rows_equal_codebook_plus_speaker() {
        let w = world();
        let fm = w.synth_speech_with_noise(&[7], 0, 99, 0.0).unwrap();
        assert!((DUR_MIN..=DUR_MAX).contains(&fm.t));
        let d = w.d_feat;
        for r in 0..fm.t {
            for j in 0..d {
                let want = w.codebook[7 * d + j] + w.speaker_offsets[j];
                assert_eq!(fm.frames[r * d + j], want);
            }
        }
    }

    #[test]
    fn synth_is_bitwise_deterministic() {
        let w = world();
        let a = w.synth_speech(&[1, 2, 3], 4, 777).unwrap();
        let b = w.synth_speech(&[1, 2, 3], 4, 777).unwrap();
        let ab: Vec<u32> = a.frames.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.frames.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }

    #[test]
    fn durations_stay_in_bounds_over_seeded_draws() {
        let w = world();
        let tokens: Vec<Token> = (0..10).collect();
        for seed in 0..1000u64 {
            let fm = w.synth_speech(&tokens, (seed % 8) as u32, seed).unwrap();
            assert!(
                (10 * DUR_MIN..=10 * DUR_MAX).contains(&fm.t),
                "T={} outside bounds",
                fm.t
            );
        }
    }

    #[test]
    fn special_token_in_synth_is_vocabulary_error() {
        let w = world();
        assert!(matches!(
            w.synth_speech(&[1, HUMAN], 0, 0),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn asr_answer_is_the_sentence() {
        let w = world();
        let s = w.make_task_sample(Task::Asr, 42, 0).unwrap();
        let audio = s.audio.as_ref().unwrap();
        let mut want = audio.source_tokens.clone();
        want.push(END_OF_TEXT);
        assert_eq!(s.answer_tokens, want);
    }

    #[test]
    fn st_with_identity_bijection_is_pure_reversal() {
        let mut w = world();
        w.pi = (0..BASE_TOKENS as Token).collect();
        w.pi_inv = w.pi.clone();
        let abc = w.vocab.tokens_of_str("abc");
        assert_eq!(w.translate(&abc), w.vocab.tokens_of_str("cba"));
    }

    #[test]
    fn st_answers_are_invertible() {
        let w = world();
        for seed in 0..50 {
            let s = w.make_task_sample(Task::St, seed, seed).unwrap();
            let src = &s.audio.as_ref().unwrap().source_tokens;
            let answer = &s.answer_tokens[..s.answer_tokens.len() - 1];
            assert_eq!(&w.untranslate(answer), src);
        }
    }

    #[test]
    fn sqa_answer_matches_regenerated_table() {
        let w = world();
        let s = w.make_task_sample(Task::Sqa, 7, 0).unwrap();
        let key = s.audio.as_ref().unwrap().source_tokens[0] as usize;
        // independent oracle: rebuild the table from the same seed
        let mut kv_rng = Stream::new(derive_seed(1234, "kv"));
        let table: Vec<Vec<Token>> = (0..BASE_TOKENS)
            .map(|_| (0..4).map(|_| kv_rng.usize_below(BASE_TOKENS) as Token).collect())
            .collect();
        assert_eq!(&s.answer_tokens[..4], &table[key][..]);
    }

    #[test]
    fn qa_has_no_audio_and_audio_tasks_have_audio() {
        let w = world();
        assert!(w.make_task_sample(Task::Qa, 1, 0).unwrap().audio.is_none());
        for task in [Task::Asr, Task::St, Task::Sqa] {
            assert!(w.make_task_sample(task, 1, 0).unwrap().audio.is_some());
        }
    }

    #[test]
    fn mix1_counts_at_scale_20() {
        let mix = DatasetMix { name: MixName::Mix1, seed: 5, scale: 20 };
        let counts = mix.counts();
        assert_eq!(counts[0], (Task::Asr, 180));
        assert_eq!(counts[1], (Task::St, 200));
        assert_eq!(counts[2], (Task::Sqa, 60));
        assert_eq!(counts[3], (Task::Qa, 60));
    }

    #[test]
    fn mix3_is_asr_heavier_than_mix2() {
        let m2 = DatasetMix { name: MixName::Mix2, seed: 5, scale: 20 }.counts();
        let m3 = DatasetMix { name: MixName::Mix3, seed: 5, scale: 20 }.counts();
        assert!(m3[0].1 > m2[0].1);
        assert_eq!(m3[1].1, m2[1].1);
        assert_eq!(m3[2].1, m2[2].1);
    }

    #[test]
    fn build_mix_is_deterministic() {
        let w = world();
        let mix = DatasetMix { name: MixName::Mix1, seed: 9, scale: 20 };
        let a = build_mix(&w, &mix).unwrap();
        let b = build_mix(&w, &mix).unwrap();
        let ids_a: Vec<u64> = a.iter().map(|s| s.sample_id).collect();
        let ids_b: Vec<u64> = b.iter().map(|s| s.sample_id).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(a.len(), 180 + 200 + 60 + 60);
    }

    #[test]
    fn test_split_disjoint_from_training() {
        let w = world();
        let mix = DatasetMix { name: MixName::Mix1, seed: 9, scale: 20 };
        let train = build_mix(&w, &mix).unwrap();
        let test = build_test_set(&w, Task::Asr, 50, 1009).unwrap();
        let train_ids: std::collections::HashSet<u64> = train.iter().map(|s| s.sample_id).collect();
        let train_sentences: std::collections::HashSet<Vec<Token>> = train
            .iter()
            .filter_map(|s| s.audio.as_ref().map(|a| a.source_tokens.clone()))
            .collect();
        for s in &test {
            assert!(!train_ids.contains(&s.sample_id));
            let sent = &s.audio.as_ref().unwrap().source_tokens;
            assert!(!train_sentences.contains(sent), "shared sentence {sent:?}");
        }
    }

    #[test]
    fn sentence_spaces_partition_on_first_token_parity() {
        let w = world();
        let mix = DatasetMix { name: MixName::Mix1, seed: 9, scale: 20 };
        for s in build_mix(&w, &mix).unwrap() {
            if let Some(a) = &s.audio {
                if s.task != Task::Sqa {
                    assert_eq!(a.source_tokens[0] % 2, 0, "train sentence starts odd");
                }
            }
        }
        for s in build_test_set(&w, Task::Asr, 30, 1009).unwrap() {
            assert_eq!(s.audio.unwrap().source_tokens[0] % 2, 1, "test sentence starts even");
        }
    }

    #[test]
    fn sentences_have_distinct_tokens() {
        let w = world();
        let mut rng = Stream::new(5);
        for _ in 0..100 {
            let s = w.sample_sentence(12, SentenceSpace::Train, &mut rng);
            let set: std::collections::HashSet<Token> = s.iter().copied().collect();
            assert_eq!(set.len(), s.len());
        }
    }

    #[test]
    fn corpus_container_round_trips() {
        let w = world();
        let mix = DatasetMix { name: MixName::Mix1, seed: 3, scale: 20 };
        let samples: Vec<TaskSample> = build_mix(&w, &mix).unwrap().into_iter().take(10).collect();
        let dir = std::env::temp_dir().join("alignlab_corpus_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.mbc");
        save_samples(&path, &samples).unwrap();
        let back = load_samples(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.task, b.task);
            assert_eq!(a.answer_tokens, b.answer_tokens);
            match (&a.audio, &b.audio) {
                (Some(x), Some(y)) => {
                    let xb: Vec<u32> = x.frames.iter().map(|v| v.to_bits()).collect();
                    let yb: Vec<u32> = y.frames.iter().map(|v| v.to_bits()).collect();
                    assert_eq!(xb, yb);
                }
                (None, None) => {}
                _ => panic!("audio presence mismatch"),
            }
        }
    }

    #[test]
    fn special_ids_are_contiguous_tail() {
        let v = Vocabulary::new();
        assert_eq!(v.size(), 74);
        assert_eq!(HUMAN as usize, BASE_TOKENS);
        assert_eq!(PAD as usize, VOCAB_SIZE - 1);
        // bijective base mapping
        for id in 0..BASE_TOKENS as Token {
            let c = v.base[id as usize];
            assert_eq!(v.id_of_char(c), Some(id));
        }
    }
}
