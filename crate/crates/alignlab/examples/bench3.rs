use alignlab::corpus::*;
use alignlab::lm::*;

fn main() {
    let world = ToyWorld::new(5, 16);
    let lm = load_lm(std::path::Path::new("/tmp/bench_lm.mbw1"), LMConfig::default(), Variant::Base).unwrap();
    let mut rng = alignlab::rng::Stream::new(909);

    for &(task, space, stutter) in &[
        (Task::Asr, SentenceSpace::Train, false),
        (Task::Asr, SentenceSpace::Train, true),
        (Task::Asr, SentenceSpace::Test, false),
        (Task::Asr, SentenceSpace::Test, true),
        (Task::St, SentenceSpace::Test, true),
    ] {
        // teacher-forced accuracy by answer position bucket
        let mut hit = [0usize; 6];
        let mut tot = [0usize; 6];
        for _ in 0..60 {
            let len = if task == Task::Asr { 5 + rng.usize_below(16) } else { 4 + rng.usize_below(7) };
            let sent = world.sample_sentence(len, space, &mut rng);
            let answer = if task == Task::Asr { sent.clone() } else { world.translate(&sent) };
            let slot: Vec<Token> = if stutter {
                sent.iter().flat_map(|&t| std::iter::repeat(t).take(3 + rng.usize_below(3))).collect()
            } else {
                sent.clone()
            };
            let mut seq = vec![HUMAN, START_AUDIO];
            seq.extend(&slot);
            seq.push(END_AUDIO);
            seq.push(task.token());
            seq.extend(world.task_prompt(task));
            seq.push(ASSISTANT);
            let prefix_len = seq.len();
            seq.extend(&answer);
            seq.push(END_OF_TEXT);
            let embs = lm.embed(&seq).unwrap();
            let logits = lm.forward(&embs).unwrap();
            let lv = logits.to_vec();
            let v = lm.config.vocab_size;
            for i in 0..answer.len() + 1 {
                let pos = prefix_len - 1 + i;
                let row = &lv[pos * v..(pos + 1) * v];
                let pred = argmax_lowest(row);
                let want = seq[pos + 1] as usize;
                let bucket = if i == answer.len() { 5 } else { (i * 5 / 20).min(4) };
                tot[bucket] += 1;
                if pred == want {
                    hit[bucket] += 1;
                }
            }
        }
        let pct: Vec<String> = (0..6)
            .map(|b| {
                if tot[b] == 0 {
                    "-".into()
                } else {
                    format!("{:.0}%", 100.0 * hit[b] as f64 / tot[b] as f64)
                }
            })
            .collect();
        println!(
            "{:?} {:?} stutter={}: pos 0-3 {} | 4-7 {} | 8-11 {} | 12-15 {} | 16-19 {} | eot {}",
            task, space, stutter, pct[0], pct[1], pct[2], pct[3], pct[4], pct[5]
        );
    }
}
