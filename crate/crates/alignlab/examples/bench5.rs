use alignlab::corpus::*;
use alignlab::lm::*;
use std::time::Instant;

// Minimal induction control: [t1..tn][ASSISTANT][t1..tn][EOT], uniform
// random distinct tokens, full loss. A healthy transformer learns this
// quickly; if this fails, the stack has a pathology.
fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let mut rng = alignlab::rng::Stream::new(11);
    let mut corpus = Vec::new();
    for _ in 0..8000 {
        let len = 5 + rng.usize_below(16);
        let mut used = [false; BASE_TOKENS];
        let mut sent: Vec<Token> = Vec::new();
        for _ in 0..len {
            loop {
                let t = rng.usize_below(BASE_TOKENS) as Token;
                if !used[t as usize] {
                    used[t as usize] = true;
                    sent.push(t);
                    break;
                }
            }
        }
        let mut seq = sent.clone();
        seq.push(ASSISTANT);
        seq.extend(&sent);
        seq.push(END_OF_TEXT);
        corpus.push(seq);
    }
    let lr: f32 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let cfg = LMConfig { pretrain_steps: steps, pretrain_lr: lr, noise_std: 0.0, ..LMConfig::default() };
    let t0 = Instant::now();
    let (lm, ppl) = pretrain_lm(&corpus, cfg, 7).unwrap();
    eprintln!("induction {} steps in {:.1?}, ppl {:.3}", steps, t0.elapsed(), ppl);

    let mut hit = 0usize;
    let mut tot = 0usize;
    for _ in 0..40 {
        let len = 5 + rng.usize_below(16);
        let mut used = [false; BASE_TOKENS];
        let mut sent: Vec<Token> = Vec::new();
        for _ in 0..len {
            loop {
                let t = rng.usize_below(BASE_TOKENS) as Token;
                if !used[t as usize] {
                    used[t as usize] = true;
                    sent.push(t);
                    break;
                }
            }
        }
        let mut seq = sent.clone();
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
            tot += 1;
            if pred == want {
                hit += 1;
            }
        }
    }
    println!("induction copy accuracy {}/{} = {:.1}%", hit, tot, 100.0 * hit as f64 / tot as f64);
}
