from .codec import C_LAT, latent_to_video, patch_decode, patch_encode, video_to_latent
from .net import DenoiserNet, NetConfig, TrainItem, training_loss
from .schedule import NoiseSchedule, cfg_combine, clip_latent, ddim_sample, ddim_timesteps, make_schedule, q_sample
