//! Synthetic corpora: copy, single-supporting-fact QA, and colour-induction
//! stories, plus the frequency-counting baseline the induction task is
//! meant to defeat.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::SeedRng;

use super::{Sample, Vocabulary, DELIM_TOKEN, QUERY_TOKEN};

const COPY_SYMBOLS: [&str; 2] = ["a", "b"];

const NAMES: [&str; 5] = ["lily", "bernhard", "greg", "julius", "brian"];
const ANIMALS: [&str; 4] = ["frog", "lion", "swan", "rhino"];
const COLOURS: [&str; 4] = ["yellow", "green", "white", "gray"];

const QA_NAMES: [&str; 5] = ["mary", "john", "sandra", "daniel", "bob"];
const QA_PLACES: [&str; 6] = ["kitchen", "garden", "office", "bathroom", "hallway", "bedroom"];
const QA_VERBS: [&str; 3] = ["went", "moved", "journeyed"];

/// Probability that a non-pivot story member repeats the answer colour.
/// Together with [`TIE_SPLIT`] and the all-distinct rule below, a large
/// original-mode corpus lands at roughly 46.5% answer-colour-unique,
/// 15.2% two-way-tie, 38.3% answer-strictly-most-frequent stories.
const REPEAT_PROB: f64 = 0.225483;
/// Probability that, given exactly one repeat, the two remaining members
/// share a colour and force a count tie.
const TIE_SPLIT: f64 = 0.375129;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopyConfig {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CopyConfig {
    fn default() -> Self {
        Self { min_len: 1, max_len: 8 }
    }
}

pub fn copy_vocab() -> Vocabulary {
    let mut v = Vocabulary::with_reserved();
    for s in COPY_SYMBOLS {
        v.intern(s);
    }
    v
}

/// `pattern ! - - ...` with the pattern as targets.
pub fn gen_copy(cfg: &CopyConfig, vocab: &Vocabulary, rng: &mut SeedRng) -> Result<Sample> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(CoreError::Config(format!(
            "bad copy length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
    let symbol_ids: Vec<usize> = COPY_SYMBOLS
        .iter()
        .map(|s| vocab.lookup(s))
        .collect::<Result<_>>()?;
    let pattern: Vec<usize> = (0..len).map(|_| symbol_ids[rng.below(symbol_ids.len())]).collect();

    let delim = vocab.lookup(DELIM_TOKEN)?;
    let answer = vocab.answer_id();
    let mut tokens = pattern.clone();
    tokens.push(delim);
    tokens.extend(std::iter::repeat(answer).take(len));
    let mask: Vec<bool> = tokens.iter().map(|&t| t == answer).collect();
    Ok(Sample {
        tokens,
        targets: pattern,
        mask,
        candidates: None,
        task: "copy".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InductionMode {
    /// Colours and animals drawn with replacement; counting colour words
    /// often gives the answer away.
    Original,
    /// No colour or animal repeats within a story, so counting is useless.
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InductionConfig {
    pub mode: InductionMode,
    /// Story members besides the queried name.
    pub support: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        Self::new(InductionMode::Original)
    }
}

impl InductionConfig {
    pub fn new(mode: InductionMode) -> Self {
        Self { mode, support: 4 }
    }

    fn validate(&self) -> Result<()> {
        if self.support == 0 || self.support + 1 > NAMES.len() {
            return Err(CoreError::Config(format!(
                "support must be 1..={}, got {}",
                NAMES.len() - 1,
                self.support
            )));
        }
        if self.support > ANIMALS.len() {
            return Err(CoreError::Config(
                "not enough animals for unique assignment".into(),
            ));
        }
        if self.mode == InductionMode::Augmented && self.support > COLOURS.len() {
            return Err(CoreError::Config(
                "augmented stories need one colour per member".into(),
            ));
        }
        Ok(())
    }
}

pub fn induction_vocab() -> Vocabulary {
    let mut v = Vocabulary::with_reserved();
    for w in ["what", "colour", "is", "a"] {
        v.intern(w);
    }
    for w in NAMES.iter().chain(&ANIMALS).chain(&COLOURS) {
        v.intern(w);
    }
    v
}

/// A story of `N is a A` / `N is C` facts whose query is answered by the
/// animal shared between the queried name and exactly one story member.
pub fn gen_induction(
    cfg: &InductionConfig,
    vocab: &Vocabulary,
    rng: &mut SeedRng,
) -> Result<Sample> {
    cfg.validate()?;
    let s = cfg.support;

    let name_order = rng.choose_distinct(NAMES.len(), s + 1);
    let members = &name_order[..s];
    let query_name = name_order[s];
    // members[0] carries the queried animal; its colour is the answer
    let pivot_animal = rng.below(ANIMALS.len());

    let mut animals = vec![pivot_animal];
    match cfg.mode {
        InductionMode::Original => {
            // keep the pivot's animal unique so the chain stays unambiguous
            for _ in 1..s {
                let mut a = rng.below(ANIMALS.len() - 1);
                if a >= pivot_animal {
                    a += 1;
                }
                animals.push(a);
            }
        }
        InductionMode::Augmented => {
            let mut rest: Vec<usize> =
                (0..ANIMALS.len()).filter(|&a| a != pivot_animal).collect();
            rng.shuffle(&mut rest);
            animals.extend_from_slice(&rest[..s - 1]);
        }
    }

    let answer_colour = rng.below(COLOURS.len());
    let mut colours = vec![answer_colour];
    let others: Vec<usize> = (0..COLOURS.len()).filter(|&c| c != answer_colour).collect();
    match cfg.mode {
        InductionMode::Augmented => {
            let mut rest = others.clone();
            rng.shuffle(&mut rest);
            colours.extend_from_slice(&rest[..s - 1]);
        }
        InductionMode::Original if s == 4 => {
            // calibrated case split over how often the answer colour repeats
            let repeats = (0..3).filter(|_| rng.uniform() < REPEAT_PROB).count();
            let mut rest = match repeats {
                0 => {
                    let mut all = others.clone();
                    rng.shuffle(&mut all);
                    all
                }
                1 => {
                    let mut rest = vec![answer_colour];
                    if rng.uniform() < TIE_SPLIT {
                        let c = others[rng.below(others.len())];
                        rest.extend([c, c]);
                    } else {
                        let pick = rng.choose_distinct(others.len(), 2);
                        rest.extend(pick.into_iter().map(|i| others[i]));
                    }
                    rest
                }
                2 => vec![answer_colour, answer_colour, others[rng.below(others.len())]],
                _ => vec![answer_colour; 3],
            };
            rng.shuffle(&mut rest);
            colours.extend(rest);
        }
        InductionMode::Original => {
            for _ in 1..s {
                if rng.uniform() < REPEAT_PROB {
                    colours.push(answer_colour);
                } else {
                    colours.push(others[rng.below(others.len())]);
                }
            }
        }
    }

    let lk = |w: &str| vocab.lookup(w);
    let (is, a_art) = (lk("is")?, lk("a")?);
    let mut statements: Vec<Vec<usize>> = Vec::with_capacity(2 * s + 1);
    for i in 0..s {
        let name = lk(NAMES[members[i]])?;
        statements.push(vec![name, is, a_art, lk(ANIMALS[animals[i]])?]);
        statements.push(vec![name, is, lk(COLOURS[colours[i]])?]);
    }
    statements.push(vec![lk(NAMES[query_name])?, is, a_art, lk(ANIMALS[pivot_animal])?]);
    rng.shuffle(&mut statements);

    let mut tokens: Vec<usize> = statements.into_iter().flatten().collect();
    tokens.extend([lk("what")?, lk("colour")?, is, lk(NAMES[query_name])?]);
    tokens.push(lk(QUERY_TOKEN)?);
    tokens.push(vocab.answer_id());
    let mask: Vec<bool> = tokens.iter().map(|&t| t == vocab.answer_id()).collect();
    let candidates: Vec<usize> = COLOURS.iter().map(|c| lk(c)).collect::<Result<_>>()?;
    Ok(Sample {
        tokens,
        targets: vec![lk(COLOURS[answer_colour])?],
        mask,
        candidates: Some(candidates),
        task: "induction".into(),
    })
}

/// Resolve an induction story the intended way: the queried name's animal
/// points at the one other name with that animal; answer its colour.
pub fn induction_answer(tokens: &[usize], vocab: &Vocabulary) -> Option<usize> {
    let is_name = |t: usize| NAMES.iter().any(|n| vocab.token(t) == *n);
    let is = vocab.lookup("is").ok()?;
    let a_art = vocab.lookup("a").ok()?;
    let what = vocab.lookup("what").ok()?;

    let mut animal_of = Vec::new();
    let mut colour_of = Vec::new();
    let mut query = None;
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == what {
            query = tokens.get(i + 3).copied();
            break;
        }
        if is_name(tokens[i]) && tokens.get(i + 1) == Some(&is) {
            if tokens.get(i + 2) == Some(&a_art) {
                animal_of.push((tokens[i], tokens[i + 3]));
                i += 4;
            } else {
                colour_of.push((tokens[i], tokens[i + 2]));
                i += 3;
            }
        } else {
            i += 1;
        }
    }
    let query = query?;
    let &(_, animal) = animal_of.iter().find(|(n, _)| *n == query)?;
    let peer = animal_of
        .iter()
        .find(|(n, a)| *n != query && *a == animal)?
        .0;
    colour_of.iter().find(|(n, _)| *n == peer).map(|&(_, c)| c)
}

/// Answer with the most frequent colour word; break ties uniformly; with
/// no repeats guess uniformly over the colours that occur.
pub fn counting_heuristic(sample: &Sample, vocab: &Vocabulary, rng: &mut SeedRng) -> usize {
    let colour_ids: Vec<usize> = COLOURS.iter().filter_map(|c| vocab.lookup(c).ok()).collect();
    let counts: Vec<usize> = colour_ids
        .iter()
        .map(|&c| sample.tokens.iter().filter(|&&t| t == c).count())
        .collect();
    let best = counts.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return colour_ids[rng.below(colour_ids.len())];
    }
    let top: Vec<usize> = colour_ids
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n == best)
        .map(|(&c, _)| c)
        .collect();
    top[rng.below(top.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaConfig {
    pub facts: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self { facts: 4 }
    }
}

pub fn qa_vocab() -> Vocabulary {
    let mut v = Vocabulary::with_reserved();
    for w in ["where", "is", "to", "the"] {
        v.intern(w);
    }
    for w in QA_VERBS.iter().chain(&QA_NAMES).chain(&QA_PLACES) {
        v.intern(w);
    }
    v
}

/// Movement facts followed by `where is N ?`; the answer is the queried
/// name's latest location.
pub fn gen_qa(cfg: &QaConfig, vocab: &Vocabulary, rng: &mut SeedRng) -> Result<Sample> {
    if cfg.facts == 0 {
        return Err(CoreError::Config("qa stories need at least one fact".into()));
    }
    let lk = |w: &str| vocab.lookup(w);
    let (is, to, the) = (lk("is")?, lk("to")?, lk("the")?);

    let mut tokens = Vec::new();
    let mut last_place = vec![None; QA_NAMES.len()];
    let mut moved = Vec::new();
    for _ in 0..cfg.facts {
        let who = rng.below(QA_NAMES.len());
        let place = rng.below(QA_PLACES.len());
        let verb = QA_VERBS[rng.below(QA_VERBS.len())];
        tokens.extend([lk(QA_NAMES[who])?, lk(verb)?, to, the, lk(QA_PLACES[place])?]);
        if last_place[who].is_none() {
            moved.push(who);
        }
        last_place[who] = Some(place);
    }
    let who = moved[rng.below(moved.len())];
    tokens.extend([lk("where")?, is, lk(QA_NAMES[who])?, lk(QUERY_TOKEN)?]);
    tokens.push(vocab.answer_id());
    let mask: Vec<bool> = tokens.iter().map(|&t| t == vocab.answer_id()).collect();
    let places: Vec<usize> = QA_PLACES.iter().map(|p| lk(p)).collect::<Result<_>>()?;
    Ok(Sample {
        tokens,
        targets: vec![lk(QA_PLACES[last_place[who].unwrap()])?],
        mask,
        candidates: Some(places),
        task: "qa".into(),
    })
}
