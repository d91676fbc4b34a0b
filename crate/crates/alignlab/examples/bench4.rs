use alignlab::corpus::*;
use alignlab::lm::*;
use std::time::Instant;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let world = ToyWorld::new(5, 16);
    let mut rng = alignlab::rng::Stream::new(11);
    // echo-only corpus
    let mut corpus = Vec::new();
    for i in 0..40000 {
        // curriculum by ordering: clean echoes first, full stutter later
        let dur: Option<(usize, usize)> = if i < 16000 {
            None
        } else if rng.usize_below(5) == 0 {
            None
        } else {
            Some((3, 5))
        };
        let space = if rng.usize_below(2) == 0 { SentenceSpace::Train } else { SentenceSpace::Test };
        // phase 2 biases long: max of two draws
        let len = if i < 16000 {
            1 + rng.usize_below(20)
        } else {
            1 + rng.usize_below(20).max(rng.usize_below(20))
        };
        let sent = world.sample_sentence(len, space, &mut rng);
        let slot: Vec<Token> = match dur {
            Some((lo, hi)) => sent
                .iter()
                .flat_map(|&t| std::iter::repeat(t).take(lo + rng.usize_below(hi - lo + 1)))
                .collect(),
            None => sent.clone(),
        };
        corpus.push(render_prompt_text(Task::Asr, &slot, &world.task_prompt(Task::Asr), &sent));
    }
    let cfg = LMConfig { pretrain_steps: steps, pretrain_lr: 2e-3, noise_std: 0.0, ..LMConfig::default() };
    let t0 = Instant::now();
    let (lm, ppl) = pretrain_lm(&corpus, cfg, 7).unwrap();
    eprintln!("echo-only {} steps in {:.1?}, ppl {:.3}", steps, t0.elapsed(), ppl);

    // teacher-forced accuracy by position
    for &(space, stutter) in &[(SentenceSpace::Test, false), (SentenceSpace::Test, true)] {
        let mut hit = [0usize; 6];
        let mut tot = [0usize; 6];
        let mut errs: std::collections::BTreeMap<i64, usize> = std::collections::BTreeMap::new();
        for _ in 0..60 {
            let len = 5 + rng.usize_below(16);
            let sent = world.sample_sentence(len, space, &mut rng);
            let slot: Vec<Token> = if stutter {
                sent.iter().flat_map(|&t| std::iter::repeat(t).take(3 + rng.usize_below(3))).collect()
            } else {
                sent.clone()
            };
            let mut seq = vec![HUMAN, START_AUDIO];
            seq.extend(&slot);
            seq.push(END_AUDIO);
            seq.push(TASK_ASR);
            seq.extend(world.task_prompt(Task::Asr));
            seq.push(ASSISTANT);
            let prefix_len = seq.len();
            seq.extend(&sent);
            seq.push(END_OF_TEXT);
            let embs = lm.embed(&seq).unwrap();
            let logits = lm.forward(&embs).unwrap();
            let lv = logits.to_vec();
            let v = lm.config.vocab_size;
            for i in 0..sent.len() + 1 {
                let pos = prefix_len - 1 + i;
                let row = &lv[pos * v..(pos + 1) * v];
                let pred = argmax_lowest(row);
                let want = seq[pos + 1] as usize;
                let bucket = if i == sent.len() { 5 } else { (i * 5 / 20).min(4) };
                tot[bucket] += 1;
                if pred == want {
                    hit[bucket] += 1;
                } else if i < sent.len() {
                    // categorize the error
                    // offset of the mispredicted token within the sentence,
                    // relative to the wanted position
                    if let Some(p) = sent.iter().position(|&t| t as usize == pred) {
                        let delta = p as i64 - i as i64;
                        *errs.entry(delta.clamp(-9, 9)).or_insert(0) += 1;
                    } else if pred == END_OF_TEXT as usize {
                        *errs.entry(100).or_insert(0) += 1;
                    } else {
                        *errs.entry(-100).or_insert(0) += 1;
                    }
                }
            }
        }
        let pct: Vec<String> = (0..6)
            .map(|b| if tot[b] == 0 { "-".into() } else { format!("{:.0}%", 100.0 * hit[b] as f64 / tot[b] as f64) })
            .collect();
        println!(
            "echo-only {:?} stutter={}: pos 0-3 {} | 4-7 {} | 8-11 {} | 12-15 {} | 16-19 {} | eot {} | errs {:?}",
            space, stutter, pct[0], pct[1], pct[2], pct[3], pct[4], pct[5], errs
        );
    }
}
