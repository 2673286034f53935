// Learning-rate and loss-weight curves for mean-teacher self-training, and the
// teacher's moving average over a toy student trajectory.

use pseudolabel::schedule::{learning_rate, loss_weights, write_schedule_csv, MeanTeacher, ParamVector, ScheduleConfig};

pub fn run_example() -> pseudolabel::Result<()> {
    let cfg = ScheduleConfig::default();
    println!("{:>6} {:>8} {:>8} {:>8}", "iter", "lr", "label", "teacher");
    for iter in [0, 2_000, 4_000, 13_000, 22_000, 31_000, 40_000] {
        let lw = loss_weights(iter, &cfg)?;
        println!("{iter:>6} {:>8.5} {:>8.4} {:>8.4}", learning_rate(iter, &cfg)?, lw.label, lw.teacher);
    }

    let short = ScheduleConfig {
        total_iters: 20,
        burn_in_iters: 5,
        ema_momentum: 0.8,
        ..ScheduleConfig::default()
    };
    let mut buf = Vec::new();
    write_schedule_csv(&short, &mut buf)?;
    let csv = String::from_utf8(buf).expect("utf-8 csv");
    println!("short schedule: {} rows, last {:?}", csv.lines().count() - 1, csv.lines().last().unwrap_or(""));

    // the student walks towards (1, 1); the teacher follows with a lag
    let mut mt = MeanTeacher::new(short.clone())?;
    for iter in 0..=short.total_iters {
        let t = iter as f64 / short.total_iters as f64;
        let student = ParamVector::new(vec![t, t * t])?;
        if let Some(teacher) = mt.step(iter, &student)? {
            if iter % 5 == 0 {
                println!("iter {iter:>2}: student {:?} teacher {:.3?}", student.as_slice(), teacher.as_slice());
            }
        }
    }
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
