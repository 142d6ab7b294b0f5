use adc_core::data::make_synthetic_stream;
use adc_core::experiment::{run_on_stream, ExperimentConfig};
use adc_core::loss::softmax;
use adc_core::train::train_task;
use adc_core::{Architecture, MethodConfig, Network, SyntheticSpec, TaskStream, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stream(seed: u64) -> TaskStream {
    make_synthetic_stream(&SyntheticSpec::default(), seed).unwrap()
}

fn fresh(seed: u64) -> Network {
    Network::new(
        &[32],
        &Architecture::default_mlp(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn teacher_is_untouched_and_head_grows() {
    let s = stream(3);
    let cfg = TrainConfig {
        epochs_first_task: 3,
        epochs_later_tasks: 3,
        ..Default::default()
    };
    let mut net = fresh(3);
    for (t, task) in s.tasks.iter().enumerate() {
        let before = net.fingerprint();
        let out = train_task(&net, task, &cfg, t, t as u64).unwrap();
        assert_eq!(net.fingerprint(), before);
        assert_eq!(out.net.num_classes(), 4 * (t + 1));
        net = out.net;
    }
}

#[test]
fn default_training_lowers_the_loss() {
    let s = stream(1993);
    let out = train_task(&fresh(1993), &s.tasks[0], &TrainConfig::default(), 0, 1).unwrap();
    assert!(out.log.last().unwrap().train_loss <= out.log[0].train_loss);
    assert!(out.log.last().unwrap().train_acc > 0.95);
}

/// Mean KL from the teacher's softened old-class distribution to the student's.
fn old_class_kl(
    teacher: &Network,
    student: &Network,
    probe: &adc_core::Tensor,
    old: usize,
    t: f64,
) -> f64 {
    let a = teacher.forward_logits(probe).unwrap();
    let b = student.forward_logits(probe).unwrap();
    let mut kl = 0.0;
    for (ra, rb) in a.rows().zip(b.rows()) {
        let p = softmax(&ra[..old], t);
        let q = softmax(&rb[..old], t);
        kl += p
            .iter()
            .zip(&q)
            .map(|(pi, qi)| pi * (pi / qi).ln())
            .sum::<f64>();
    }
    kl / probe.batch_size() as f64
}

#[test]
fn distillation_holds_old_class_outputs_in_place() {
    let s = stream(8);
    // lambda = 100 scales the step a hundredfold, so both runs use a small rate.
    let cfg = TrainConfig {
        epochs_first_task: 10,
        epochs_later_tasks: 10,
        lr_later_tasks: 0.001,
        ..Default::default()
    };
    let teacher = train_task(&fresh(8), &s.tasks[0], &cfg, 0, 0).unwrap().net;
    let plain = train_task(
        &teacher,
        &s.tasks[1],
        &TrainConfig {
            lambda: 0.0,
            ..cfg.clone()
        },
        1,
        1,
    )
    .unwrap()
    .net;
    let strong = train_task(
        &teacher,
        &s.tasks[1],
        &TrainConfig {
            lambda: 100.0,
            ..cfg.clone()
        },
        1,
        1,
    )
    .unwrap()
    .net;
    let probe = s.test_tasks[0].samples();
    let kl_plain = old_class_kl(&teacher, &plain, probe, 4, cfg.temperature);
    let kl_strong = old_class_kl(&teacher, &strong, probe, 4, cfg.temperature);
    assert!(kl_strong < kl_plain, "{kl_strong} vs {kl_plain}");
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            epochs_first_task: 2,
            epochs_later_tasks: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn finished_tasks_release_their_training_data() {
    let methods: Vec<MethodConfig> = ["finetune", "lwf", "ncm", "sdc", "adc"]
        .iter()
        .map(|m| m.parse().unwrap())
        .collect();
    let s = stream(2);
    let handles: Vec<_> = s.tasks.iter().map(|t| t.storage_handle()).collect();
    let mut alive_after = Vec::new();
    run_on_stream(&small_config(), &methods, 2, s, &mut |t| {
        alive_after.push(
            handles[..=t]
                .iter()
                .filter(|h| h.upgrade().is_some())
                .count(),
        )
    })
    .unwrap();
    assert_eq!(alive_after, vec![0; 5]);
}

#[test]
fn a_kept_reference_is_detected() {
    // Control for the test above: a clone held outside keeps the storage alive.
    let s = stream(2);
    let kept = s.tasks[0].clone();
    let handle = s.tasks[0].storage_handle();
    let methods = ["adc".parse().unwrap()];
    let mut alive = Vec::new();
    run_on_stream(&small_config(), &methods, 2, s, &mut |_| {
        alive.push(handle.upgrade().is_some())
    })
    .unwrap();
    assert!(alive.iter().all(|&a| a));
    drop(kept);
    assert!(handle.upgrade().is_none());
}

#[test]
fn oracle_accuracy_only_with_evaluation_flag() {
    let methods = ["ncm".parse().unwrap()];
    let off = run_on_stream(&small_config(), &methods, 5, stream(5), &mut |_| {}).unwrap();
    assert!(off[0].oracle_accuracy.is_empty());
    let cfg = ExperimentConfig {
        oracle_eval: true,
        ..small_config()
    };
    let on = run_on_stream(&cfg, &methods, 5, stream(5), &mut |_| {}).unwrap();
    assert_eq!(on[0].oracle_accuracy.len(), 5);
    // The flag must not change what the method itself measures.
    assert_eq!(on[0].per_task_accuracy, off[0].per_task_accuracy);
}
