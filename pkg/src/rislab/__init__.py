"""RIS-assisted multi-user MIMO beam management laboratory."""

from .channel import (ChannelSet, Precoder, RisPhaseConfig, ScenarioConfig,
                      dbm_to_mw, effective_channel, generate_channels,
                      generate_dataset, se_user, sinr_user, sum_se)
from .env import EnvConfig, RisEnv, decode_action, normalize_state
from .lwm import ChannelEmbedder, ChannelEncoder, finetune
from .ddpg import AgentConfig, DDPGAgent, ReplayBuffer, train
from .baselines import beam_sweep, dft_codebook, raw_state

__version__ = "0.1.0"
