"""Model assembly: paired VAEs, the alignment map, and twin GANs over one store.

The image-scale architecture follows the five-layer twin-generator /
twin-discriminator layout with its default sharing pattern (first four
generator layers tied, last discriminator layer tied).  Stride-1 convolutions
cannot upsample a code into an image, so the generator realizes the five rows
as: a fully connected projection of z to a 4x4 feature map, three stride-2
transposed convolutions (kernel sizes 5, 5, 3), and a stride-1 convolution to
image channels with a tanh output.  The tied-layer pattern is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import (
    LayerSpec,
    NetSpec,
    Network,
    ParameterStore,
    SharingConfig,
    build_discriminator_pair,
    build_generator_pair,
    build_network,
    init_params,
)
from .rng import Rng
from .vae import VaeNets

LATENT_DIM = 100
IMAGE_SHAPE = (3, 32, 32)
GEN_CHANNELS = 20
DISC_FC_WIDTH = 1024
VAE_HIDDEN = 512


@dataclass
class ModelBundle:
    """Every network of one training run, backed by a single ParameterStore."""

    store: ParameterStore
    vae_a: VaeNets
    vae_b: VaeNets
    align_net: Network
    g1: Network
    g2: Network
    f1: Network
    f2: Network
    latent_dim: int
    data_shape: tuple[int, ...]
    sharing: SharingConfig

    def group(self, name: str) -> list[str]:
        """Deduplicated trainable slot ids for one update phase."""
        if name == "vae":
            ids = self.vae_a.slot_ids() + self.vae_b.slot_ids()
        elif name == "align":
            # The alignment loss trains the map and, through z, both encoders.
            ids = (
                self.align_net.slot_ids()
                + self.vae_a.encoder_slot_ids()
                + self.vae_b.encoder_slot_ids()
            )
        elif name == "d":
            ids = self.f1.slot_ids() + self.f2.slot_ids()
        elif name == "g":
            ids = self.g1.slot_ids() + self.g2.slot_ids()
        else:
            raise KeyError(f"unknown parameter group {name!r}")
        return sorted(set(ids))

    def stream_group(self, name: str, stream: int) -> list[str]:
        """Slot ids belonging to one GAN stream (1 or 2), for isolated runs."""
        vae = self.vae_a if stream == 1 else self.vae_b
        nets = {"vae": [vae], "d": [self.f1 if stream == 1 else self.f2],
                "g": [self.g1 if stream == 1 else self.g2]}[name]
        ids: list[str] = []
        for net_or_vae in nets:
            ids += net_or_vae.slot_ids()
        return sorted(set(ids))


def _mlp_spec(name: str, dims: list[int], out_activation: str | None,
              hidden_activation: str = "relu") -> NetSpec:
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        layers.append(
            LayerSpec(
                kind="fc",
                in_dim=dims[i],
                out_dim=dims[i + 1],
                activation=out_activation if last else hidden_activation,
            )
        )
    return NetSpec(name, tuple(layers))


def _build_vae(store: ParameterStore, view: str, data_dim: int, latent_dim: int,
               hidden: int, decoder_out_activation: str | None, data_shape) -> VaeNets:
    name = f"vae_{view.lower()}"
    trunk = build_network(
        f"{name}.enc", _mlp_spec("enc_trunk", [data_dim, hidden, hidden], None), store
    )
    head_mu = build_network(
        f"{name}.mu", _mlp_spec("enc_mu", [hidden, latent_dim], None), store
    )
    head_log_var = build_network(
        f"{name}.logvar", _mlp_spec("enc_logvar", [hidden, latent_dim], None), store
    )
    dec_spec = _mlp_spec("dec", [latent_dim, hidden, hidden, data_dim], decoder_out_activation)
    if len(data_shape) > 1:
        last = dec_spec.layers[-1]
        dec_spec = NetSpec(
            dec_spec.name,
            dec_spec.layers[:-1] + (replace(last, reshape_output=tuple(data_shape)),),
        )
    decoder = build_network(f"{name}.dec", dec_spec, store)
    # Image inputs are flattened before the first encoder matmul.
    if len(data_shape) > 1:
        first = trunk.spec.layers[0]
        trunk.spec = NetSpec(
            trunk.spec.name, (replace(first, flatten_input=True),) + trunk.spec.layers[1:]
        )
    return VaeNets(trunk=trunk, head_mu=head_mu, head_log_var=head_log_var,
                   decoder=decoder, view=view)


def image_generator_spec(latent_dim: int = LATENT_DIM) -> NetSpec:
    ch = GEN_CHANNELS
    return NetSpec(
        "generator",
        (
            # Row 1: z projected to a 4x4 map (decode high-level concept first).
            LayerSpec(kind="fc", in_dim=latent_dim, out_dim=ch * 4 * 4,
                      batchnorm=True, activation="relu",
                      reshape_output=(ch, 4, 4)),
            LayerSpec(kind="conv_transpose", in_dim=ch, out_dim=ch, kernel=5,
                      stride=2, padding=2, out_pad=1, batchnorm=True, activation="relu"),
            LayerSpec(kind="conv_transpose", in_dim=ch, out_dim=ch, kernel=5,
                      stride=2, padding=2, out_pad=1, batchnorm=True, activation="relu"),
            LayerSpec(kind="conv_transpose", in_dim=ch, out_dim=ch, kernel=3,
                      stride=2, padding=1, out_pad=1, batchnorm=True, activation="relu"),
            LayerSpec(kind="conv", in_dim=ch, out_dim=3, kernel=3, stride=1,
                      padding=1, activation="tanh"),
        ),
    )


def image_discriminator_spec() -> NetSpec:
    ch = GEN_CHANNELS
    return NetSpec(
        "discriminator",
        (
            LayerSpec(kind="conv", in_dim=3, out_dim=ch, kernel=5, stride=1,
                      padding=2, activation="leaky_relu", pool=(2, 2)),
            LayerSpec(kind="conv", in_dim=ch, out_dim=ch, kernel=5, stride=1,
                      padding=2, activation="leaky_relu", pool=(2, 2)),
            LayerSpec(kind="conv", in_dim=ch, out_dim=ch, kernel=5, stride=1,
                      padding=2, activation="leaky_relu", pool=(2, 2)),
            LayerSpec(kind="fc", in_dim=ch * 4 * 4, out_dim=DISC_FC_WIDTH,
                      activation="relu", flatten_input=True),
            # Scalar probability head; 1024 is the penultimate width.
            LayerSpec(kind="fc", in_dim=DISC_FC_WIDTH, out_dim=1, activation="sigmoid"),
        ),
    )


def _align_spec(latent_dim: int) -> NetSpec:
    return NetSpec(
        "align", (LayerSpec(kind="fc", in_dim=latent_dim, out_dim=latent_dim, activation="tanh"),)
    )


def build_image_models(
    sharing: SharingConfig, rng: Rng, latent_dim: int = LATENT_DIM,
    vae_hidden: int = VAE_HIDDEN,
) -> ModelBundle:
    """The 32x32x3 desk-scale architecture."""
    store = ParameterStore()
    gen_spec = image_generator_spec(latent_dim)
    disc_spec = image_discriminator_spec()
    sharing.validate(gen_spec.depth, disc_spec.depth)
    data_dim = int(np.prod(IMAGE_SHAPE))
    vae_a = _build_vae(store, "A", data_dim, latent_dim, vae_hidden, "tanh", IMAGE_SHAPE)
    vae_b = _build_vae(store, "B", data_dim, latent_dim, vae_hidden, "tanh", IMAGE_SHAPE)
    align_net = build_network("align", _align_spec(latent_dim), store)
    g1, g2 = build_generator_pair(gen_spec, sharing, store)
    f1, f2 = build_discriminator_pair(disc_spec, sharing, store)
    init_params(store, rng)
    return ModelBundle(
        store=store, vae_a=vae_a, vae_b=vae_b, align_net=align_net,
        g1=g1, g2=g2, f1=f1, f2=f2, latent_dim=latent_dim,
        data_shape=IMAGE_SHAPE, sharing=sharing,
    )


def toy_generator_spec(latent_dim: int, hidden: int = 16) -> NetSpec:
    return NetSpec(
        "toy_generator",
        (
            LayerSpec(kind="fc", in_dim=latent_dim, out_dim=hidden, activation="relu"),
            LayerSpec(kind="fc", in_dim=hidden, out_dim=1, activation=None),
        ),
    )


def toy_discriminator_spec(hidden: int = 16) -> NetSpec:
    return NetSpec(
        "toy_discriminator",
        (
            LayerSpec(kind="fc", in_dim=1, out_dim=hidden, activation="leaky_relu"),
            LayerSpec(kind="fc", in_dim=hidden, out_dim=1, activation="sigmoid"),
        ),
    )


def build_toy_models(
    sharing: SharingConfig, rng: Rng, latent_dim: int = 4, hidden: int = 16
) -> ModelBundle:
    """1-d two-Gaussian task: samples stand in for images."""
    store = ParameterStore()
    gen_spec = toy_generator_spec(latent_dim, hidden)
    disc_spec = toy_discriminator_spec(hidden)
    sharing.validate(gen_spec.depth, disc_spec.depth)
    vae_a = _build_vae(store, "A", 1, latent_dim, hidden, None, (1,))
    vae_b = _build_vae(store, "B", 1, latent_dim, hidden, None, (1,))
    align_net = build_network("align", _align_spec(latent_dim), store)
    g1, g2 = build_generator_pair(gen_spec, sharing, store)
    f1, f2 = build_discriminator_pair(disc_spec, sharing, store)
    init_params(store, rng, weight_std=0.1)
    return ModelBundle(
        store=store, vae_a=vae_a, vae_b=vae_b, align_net=align_net,
        g1=g1, g2=g2, f1=f1, f2=f2, latent_dim=latent_dim,
        data_shape=(1,), sharing=sharing,
    )
