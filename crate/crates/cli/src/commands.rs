use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use noisy_channel::bridge::{serve, spawn_tcp, Endpoint, RemoteScorer, ScorerSet, DEFAULT_TIMEOUT};
use noisy_channel::decoder::{decode_corpus, to_nbest, DecoderConfig, Scorers, SearchMode};
use noisy_channel::eval::BleuStats;
use noisy_channel::nbest::{read_nbest, write_nbest, NBestEntry, ScoreWeights};
use noisy_channel::oracle::{exhaustive_decode, OracleConfig};
use noisy_channel::pipeline::{
    prefix_grid, EncodedSplit, ToyModels, TrainConfig, PREFIX_TSV_HEADER,
};
use noisy_channel::reranker::{
    rerank, score_target, selection_bleu, tune, FeatureSet, TargetPrefix, TuneConfig,
};
use noisy_channel::scorers::SentencePair;
use noisy_channel::synthetic::{make_synthetic, named_rng, SyntheticConfig};
use noisy_channel::vocab::{build_vocabulary, read_corpus, write_corpus, TokenId, Vocabulary};
use rand::Rng;

use crate::models::{check_dir, existing, save, ModelDir};
use crate::{
    AnalyzePrefixArgs, BleuArgs, Cli, Command, DecodeArgs, MakeSyntheticArgs, Mode, OracleArgs,
    RerankArgs, SearchArgs, ServeArgs, TrainToyArgs, TuneArgs, TuneSearchArgs, Usage, WeightArgs,
};

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeSynthetic(a) => make_synthetic_cmd(a, cli.seed),
        Command::TrainToy(a) => train_toy(a, cli.seed),
        Command::Decode(a) => decode(a),
        Command::Rerank(a) => rerank_cmd(a),
        Command::Tune(a) => tune_cmd(a, cli.seed),
        Command::AnalyzePrefix(a) => analyze_prefix(a, cli.seed),
        Command::Bleu(a) => bleu(a),
        Command::ServeScorer(a) => serve_scorer(a),
        Command::OracleDecode(a) => oracle_decode(a),
    }
}

/// A seed for one named consumer of the root seed.
fn sub_seed(seed: u64, name: &str) -> u64 {
    named_rng(seed, name).gen()
}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

fn target_vocab(models: &Path) -> Result<Vocabulary> {
    check_dir(models)?;
    Vocabulary::read(models.join("target.vocab")).context("reading target vocabulary")
}

fn encode_file(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    let corpus = read_corpus(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(corpus.iter().map(|s| vocab.encode(s)).collect())
}

fn make_synthetic_cmd(a: &MakeSyntheticArgs, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        seed,
        target_words: a.target_words,
        source_words: a.source_words,
        train: a.train,
        dev: a.dev,
        test: a.test,
        min_len: a.min_len,
        max_len: a.max_len,
        successors: a.successors,
        translations: a.translations,
        insertion_rate: a.insertion_rate,
        reorder_rate: a.reorder_rate,
    };
    cfg.validate().map_err(usage)?;
    let data = make_synthetic(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, split) in [
        ("train", &data.train),
        ("dev", &data.dev),
        ("test", &data.test),
    ] {
        write_corpus(a.out.join(format!("{name}.src")), &split.source)?;
        write_corpus(a.out.join(format!("{name}.tgt")), &split.target)?;
    }
    println!(
        "wrote {} train, {} dev, {} test pairs to {}",
        data.train.source.len(),
        data.dev.source.len(),
        data.test.source.len(),
        a.out.display()
    );
    Ok(())
}

fn train_toy(a: &TrainToyArgs, seed: u64) -> Result<()> {
    existing(&a.src)?;
    existing(&a.tgt)?;
    if !(a.tension.is_finite() && a.tension >= 0.0) {
        return Err(usage("--tension must be finite and non-negative"));
    }
    let src = read_corpus(&a.src)?;
    let tgt = read_corpus(&a.tgt)?;
    if src.len() != tgt.len() {
        bail!(
            "{} has {} lines but {} has {}",
            a.src.display(),
            src.len(),
            a.tgt.display(),
            tgt.len()
        );
    }
    let source_vocab = build_vocabulary(&src, 1)?;
    let target_vocab = build_vocabulary(&tgt, 1)?;
    let pairs: Vec<SentencePair> = src
        .iter()
        .zip(&tgt)
        .map(|(x, y)| SentencePair::new(source_vocab.encode(x), target_vocab.encode(y)))
        .collect();
    let cfg = TrainConfig {
        em_iterations: a.em_iterations,
        lm_order: a.lm_order,
        lm_alpha: a.lm_alpha,
        tension: a.tension,
        seed: sub_seed(seed, "em"),
    };
    let models = ToyModels::train(&pairs, source_vocab.len(), target_vocab.len(), &cfg)?;
    save(&a.out, &source_vocab, &target_vocab, &models)?;
    let mut trace = String::from("model\titeration\tlog_likelihood\n");
    for (name, t) in &models.traces {
        for (i, ll) in t.log_likelihoods.iter().enumerate() {
            trace.push_str(&format!("{name}\t{}\t{ll}\n", i + 1));
        }
    }
    fs::write(a.out.join("em.tsv"), trace)?;
    for (name, t) in &models.traces {
        if let Some(ll) = t.log_likelihoods.last() {
            println!("{name}: final log-likelihood {ll:.4}");
        }
    }
    Ok(())
}

fn decoder_config(s: &SearchArgs) -> Result<DecoderConfig> {
    let cfg = DecoderConfig {
        k1: s.k1,
        k2: s.k2,
        lambda1: s.lambda1,
        word_reward: s.word_reward,
        per_word: s.per_word,
        max_len_ratio: s.max_len_ratio,
        max_len_slack: s.max_len_slack,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn decode(a: &DecodeArgs) -> Result<()> {
    existing(&a.input)?;
    let cfg = decoder_config(&a.search)?;
    let endpoint: Option<Endpoint> = a
        .remote
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(usage)?;
    let models = ModelDir::load(&a.models)?;
    let sources = encode_file(&a.input, &models.source_vocab)?;
    let mode = match a.mode {
        Mode::Direct => SearchMode::Direct,
        Mode::NoisyChannel => SearchMode::NoisyChannel,
    };
    let local = models.scorers(a.channel);
    let remote = match &endpoint {
        Some(e) => Some(RemoteScorer::connect(
            e,
            models.target_vocab.len(),
            DEFAULT_TIMEOUT,
        )?),
        None => None,
    };
    let scorers = match &remote {
        Some(r) => Scorers::noisy_channel(r, r, r),
        None => local,
    };
    let hyps = decode_corpus(&sources, &scorers, mode, &cfg)?;
    let mut entries: Vec<NBestEntry> = hyps
        .iter()
        .enumerate()
        .flat_map(|(i, h)| to_nbest(i, h, mode))
        .collect();
    // Features the search did not produce are scored on the full sentence.
    let fill = Scorers {
        reverse: local.reverse,
        ..scorers
    };
    for e in &mut entries {
        for (name, value) in score_target(&sources[e.sentence_id], &e.target, true, &fill)? {
            e.features.entry(name.to_string()).or_insert(value);
        }
    }
    write_nbest(&entries, &models.target_vocab, &a.output)?;
    println!(
        "decoded {} sentences into {} candidates",
        sources.len(),
        entries.len()
    );
    Ok(())
}

fn weights(a: &WeightArgs) -> Result<ScoreWeights> {
    let mut w = match &a.weights {
        Some(path) => ScoreWeights::read(existing(path)?)?,
        None => ScoreWeights::direct_only(),
    };
    let overrides = [
        a.w_direct,
        a.w_channel,
        a.w_lm,
        a.w_reverse,
        a.w_word_reward,
    ];
    let mut values = w.as_array();
    for (slot, o) in values.iter_mut().zip(overrides) {
        if let Some(v) = o {
            *slot = v;
        }
    }
    w = ScoreWeights::from_array(values);
    w.validate().map_err(usage)?;
    Ok(w)
}

fn rerank_cmd(a: &RerankArgs) -> Result<()> {
    existing(&a.nbest)?;
    if let Some(r) = &a.references {
        existing(r)?;
    }
    let w = weights(&a.weights)?;
    let vocab = target_vocab(&a.models)?;
    let entries = read_nbest(&a.nbest, &vocab)?;
    let selections = rerank(&entries, &w)?;
    let mut out = String::new();
    for s in &selections {
        out.push_str(&vocab.decode(&entries[s.index].target).join(" "));
        out.push('\n');
    }
    fs::write(&a.output, out)?;
    if let Some(r) = &a.references {
        let refs = encode_file(r, &vocab)?;
        println!(
            "BLEU = {:.2}",
            selection_bleu(&entries, &selections, &refs)?
        );
    }
    Ok(())
}

fn tune_config(s: &TuneSearchArgs, features: FeatureSet, seed: u64) -> TuneConfig {
    TuneConfig {
        trials: s.trials,
        seed: sub_seed(seed, "tune"),
        weight_range: (s.weight_min, s.weight_max),
        reward_range: (s.reward_min, s.reward_max),
        refinement_rounds: s.rounds,
        features,
    }
}

fn tune_cmd(a: &TuneArgs, seed: u64) -> Result<()> {
    existing(&a.nbest)?;
    existing(&a.references)?;
    let features: FeatureSet = a.features.parse().map_err(usage)?;
    let vocab = target_vocab(&a.models)?;
    let entries = read_nbest(&a.nbest, &vocab)?;
    let refs = encode_file(&a.references, &vocab)?;
    let result = tune(&entries, &refs, &tune_config(&a.search, features, seed))?;
    result.weights.write(&a.output)?;
    println!("dev BLEU = {:.2} ({features})", result.bleu);
    Ok(())
}

fn parse_list<T>(text: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    text.split(',')
        .map(|p| parse(p.trim()).ok_or_else(|| usage(format!("bad {what} `{}`", p.trim()))))
        .collect()
}

fn analyze_prefix(a: &AnalyzePrefixArgs, seed: u64) -> Result<()> {
    existing(&a.nbest)?;
    existing(&a.input)?;
    existing(&a.references)?;
    let targets = parse_list(&a.targets, "target prefix", |p| {
        if p.contains('.') {
            p.parse().ok().map(TargetPrefix::Fraction)
        } else {
            p.parse().ok().map(TargetPrefix::Length)
        }
    })?;
    let sources = parse_list(&a.sources, "source fraction", |p| p.parse().ok())?;
    let sets: Vec<FeatureSet> = parse_list(&a.sets, "feature set", |p| p.parse().ok())?;
    let fixed = weights(&a.weights)?;
    let models = ModelDir::load(&a.models)?;
    let entries = read_nbest(&a.nbest, &models.target_vocab)?;
    let split = EncodedSplit {
        sources: encode_file(&a.input, &models.source_vocab)?,
        references: encode_file(&a.references, &models.target_vocab)?,
    };
    let tuning = a
        .tune
        .then(|| tune_config(&a.search, FeatureSet::CH_DIR_LM, seed));
    let rows = prefix_grid(
        &entries,
        &split,
        &models.scorers(a.channel),
        &targets,
        &sources,
        &sets,
        tuning.as_ref(),
        &fixed,
    )?;
    let mut table = format!("{PREFIX_TSV_HEADER}\n");
    for r in &rows {
        table.push_str(&r.to_tsv());
        table.push('\n');
    }
    match &a.output {
        Some(path) => fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn bleu(a: &BleuArgs) -> Result<()> {
    existing(&a.hyp)?;
    existing(&a.reference)?;
    let hyps = read_corpus(&a.hyp)?;
    let refs = read_corpus(&a.reference)?;
    if hyps.len() != refs.len() {
        bail!("{} hypotheses but {} references", hyps.len(), refs.len());
    }
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(&refs) {
        stats.accumulate(h, r);
    }
    let precisions: Vec<String> = (1..=4)
        .map(|n| format!("{:.1}", 100.0 * stats.precision(n)))
        .collect();
    println!(
        "BLEU = {:.2}, {} (BP={:.3}, hyp_len={}, ref_len={})",
        stats.bleu()?,
        precisions.join("/"),
        stats.brevity_penalty(),
        stats.hyp_len,
        stats.ref_len
    );
    Ok(())
}

fn serve_scorer(a: &ServeArgs) -> Result<()> {
    let endpoint: Endpoint = a.endpoint.parse().map_err(usage)?;
    let models = ModelDir::load(&a.models)?;
    let channel = match a.channel {
        crate::ChannelKind::Full => models.channel,
        crate::ChannelKind::Prefix => models.prefix_channel,
    };
    let set = Arc::new(ScorerSet {
        direct: Some(Arc::new(models.direct)),
        channel: Some(Arc::new(channel)),
        lm: Some(Arc::new(models.lm)),
    });
    match endpoint {
        Endpoint::Tcp(addr) => {
            let server = spawn_tcp(set, &addr)?;
            println!("listening on {}", server.endpoint());
            std::io::stdout().flush()?;
            server.wait();
            Ok(())
        }
        Endpoint::Stdio => Ok(serve(set, &Endpoint::Stdio)?),
    }
}

fn oracle_decode(a: &OracleArgs) -> Result<()> {
    existing(&a.input)?;
    let cfg = decoder_config(&a.search)?;
    let models = ModelDir::load(&a.models)?;
    let sources = encode_file(&a.input, &models.source_vocab)?;
    let scorers = models.scorers(crate::ChannelKind::Full);
    let ocfg = OracleConfig { max_len: a.max_len };
    for x in &sources {
        let best = exhaustive_decode(x, &scorers, &cfg, &ocfg)?.best;
        println!(
            "{}\t{}",
            models.target_vocab.decode(&best.target).join(" "),
            best.combined
        );
    }
    Ok(())
}
