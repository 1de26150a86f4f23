"""Energy-aware sensor sleeping policies for object tracking."""

from .model import (
    TERMINAL,
    BrownianKernel,
    DistanceMeasure,
    FiniteKernel,
    FiniteStateSpace,
    Interval,
    NetworkModel,
    Sensor,
    distance,
    make_network,
    network_a,
    network_b,
    network_c,
    new_sleep_state,
    observe,
    residual_step,
)
from .filtering import (
    DenseBelief,
    ParticleBelief,
    belief_update,
    estimate,
    expected_tracking_cost,
    kernel_predict,
    particle_update,
)
from .cost_tables import (
    CostTable,
    asleep_increment,
    build_table,
    greedy_increments,
    learn_update,
    load_table,
    save_table,
)
from .policy import (
    AllAsleepPolicy,
    AllAwakePolicy,
    FcrPolicy,
    QmdpPolicy,
    act,
    fcr_sleep_time,
    fcr_value,
    qmdp_sleep_time,
    qmdp_solve,
    solve_qmdp_policy,
)
from .lower_bound import (
    BoundTables,
    LambdaMatrix,
    LambdaSearch,
    bound_tables,
    lb_envelope,
    lb_solve,
    pairwise_error,
)
from .sim import (
    EpisodeResult,
    LearningSchedule,
    TradeoffPoint,
    expected_lifetime,
    run_episode,
    run_learning_campaign,
    sweep,
    write_tradeoff_csv,
)

__version__ = "0.1.0"
