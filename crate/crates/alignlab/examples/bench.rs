use alignlab::corpus::*;
use alignlab::lm::*;
use alignlab::infer::CachedLm;
use std::time::Instant;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let lr: f32 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let world = ToyWorld::new(5, 16);
    let corpus = lm_pretrain_corpus(&world, 36000, 11);
    let cfg = LMConfig { pretrain_steps: steps, pretrain_lr: lr, ..LMConfig::default() };
    let t0 = Instant::now();
    let (lm, ppl) = pretrain_lm(&corpus, cfg, 7).unwrap();
    eprintln!("{} steps lr {} in {:.1?}, ppl {:.3}", steps, lr, t0.elapsed(), ppl);
    save_lm(std::path::Path::new("/tmp/bench_lm.mbw1"), &lm).unwrap();

    let mut rng = alignlab::rng::Stream::new(909);
    let cached = CachedLm::new(&lm);
    for &(task, stutter) in &[(Task::Asr, false), (Task::Asr, true), (Task::St, true)] {
        let mut cer_sum = 0.0; let mut rouge_sum = 0.0; let mut n = 0.0;
        for _ in 0..30 {
            let len = if task == Task::Asr { 5 + rng.usize_below(16) } else { 4 + rng.usize_below(7) };
            let sent = world.sample_sentence(len, SentenceSpace::Test, &mut rng);
            let answer = if task == Task::Asr { sent.clone() } else { world.translate(&sent) };
            let slot: Vec<Token> = if stutter {
                sent.iter().flat_map(|&t| std::iter::repeat(t).take(3 + rng.usize_below(3))).collect()
            } else { sent.clone() };
            let mut seq = vec![HUMAN, START_AUDIO];
            seq.extend(&slot);
            seq.push(END_AUDIO); seq.push(task.token());
            seq.extend(world.task_prompt(task));
            seq.push(ASSISTANT);
            let prefix = lm.embed(&seq).unwrap();
            let out = cached.decode_greedy(&prefix, 64).unwrap();
            let hyp: Vec<Token> = out.iter().copied().take_while(|&t| t != END_OF_TEXT).collect();
            cer_sum += alignlab::eval::cer(&hyp, &answer).unwrap();
            rouge_sum += alignlab::eval::rouge_l(&hyp, &answer).unwrap();
            n += 1.0;
        }
        eprintln!("{:?} stutter={} CER {:.1} ROUGE {:.1}", task, stutter, cer_sum/n, rouge_sum/n);
    }
    let mut ok = 0;
    for k in 0..64usize {
        let mut seq = vec![HUMAN, START_AUDIO];
        seq.extend(world.kv_query(k));
        seq.push(END_AUDIO); seq.push(TASK_SQA);
        seq.extend(world.task_prompt(Task::Sqa));
        seq.push(ASSISTANT);
        let prefix = lm.embed(&seq).unwrap();
        let out = cached.decode_greedy(&prefix, 8).unwrap();
        let hyp: Vec<Token> = out.iter().copied().take_while(|&t| t != END_OF_TEXT).collect();
        if hyp == world.kv_values[k] { ok += 1; }
    }
    eprintln!("SQA table {}/64", ok);
}
