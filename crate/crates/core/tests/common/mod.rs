#![allow(dead_code)]

use noisy_channel::decoder::Scorers;
use noisy_channel::scorers::{ChannelModel, DirectModel, DirectScorer, Direction, NGramTable};
use noisy_channel::toy::{random_lexicon, random_ngram, HashedDirect};
use noisy_channel::vocab::{TokenId, UNK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One random decoding problem: a source sentence and three toy models over
/// `content` target content tokens.
pub struct Instance {
    pub source: Vec<TokenId>,
    pub direct: Box<dyn DirectScorer>,
    pub channel: ChannelModel,
    pub lm: NGramTable,
}

impl Instance {
    pub fn scorers(&self) -> Scorers<'_> {
        Scorers::noisy_channel(self.direct.as_ref(), &self.channel, &self.lm)
    }

    pub fn vocab_size(&self) -> usize {
        self.direct.vocab_size()
    }
}

/// Alternates between an order-sensitive hashed direct model and an IBM-1
/// direct model so both shapes of distribution get exercised.
pub fn random_instance(seed: u64, content: usize, max_source_len: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tgt = UNK as usize + content;
    let src = UNK as usize + content.max(2);
    let len = rng.gen_range(1..=max_source_len);
    let source = (0..len)
        .map(|_| rng.gen_range(UNK..src as TokenId))
        .collect();
    let direct: Box<dyn DirectScorer> = if seed.is_multiple_of(2) {
        Box::new(HashedDirect::new(tgt, rng.gen(), rng.gen_range(0.5..4.0)).unwrap())
    } else {
        let ratio = rng.gen_range(0.5..2.0);
        let table = random_lexicon(Direction::SourceToTarget, src, tgt, ratio, &mut rng).unwrap();
        Box::new(DirectModel::new(table).unwrap())
    };
    let ratio = rng.gen_range(0.5..2.0);
    let channel = ChannelModel::new(
        random_lexicon(Direction::TargetToSource, tgt, src, ratio, &mut rng).unwrap(),
    )
    .unwrap();
    let order = rng.gen_range(1..=3);
    let lm = random_ngram(order, tgt, rng.gen_range(0.05..1.0), 40, &mut rng).unwrap();
    Instance {
        source,
        direct,
        channel,
        lm,
    }
}
