"""HTTP service over the core package.

Long-running surface for the naturally multi-client parts: load a
trained checkpoint once, then serve sentiment-switchable decodes over
shared read-only parameters. Batch jobs (synth, train, gradcheck,
evaluate) are exposed too; at desk scale they complete within a request.
"""

from __future__ import annotations

import dataclasses
import itertools
import threading
import warnings

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from . import __version__
from . import data as D
from .checkpoint import load_checkpoint
from .cli import GRADCHECK_TOLERANCE, gradcheck_model_config, run_gradcheck
from .config import RunConfig
from .data import SynthSpec, Vocabulary, synth_toy_corpus, write_synth_corpus
from .errors import ConfigError, DataError, MoodcapError
from .metrics import MetricReport
from .model import ModelConfig, Parameters, Sentiment, SpatialFeatures, Variant
from .pipeline import GeneratedLine, evaluate_lines, generate_captions
from .schemas import (
    CaptionModel,
    EpochLogModel,
    EvaluateRequest,
    EvaluateResponse,
    GenerateRequest,
    GenerateResponse,
    GradcheckRequest,
    GradcheckResponse,
    HealthResponse,
    LoadModelRequest,
    MetricRowModel,
    ModelInfo,
    ModelListResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)
from .training import train


@dataclasses.dataclass
class LoadedModel:
    model_id: str
    checkpoint: str
    params: Parameters
    config: ModelConfig
    vocab: Vocabulary

    def info(self) -> ModelInfo:
        return ModelInfo(model_id=self.model_id, checkpoint=self.checkpoint,
                         variant=self.config.variant.value,
                         vocab_size=self.config.vocab_size,
                         regions=self.config.regions,
                         feature_dim=self.config.feature_dim)


def _report_model(report: MetricReport) -> MetricRowModel:
    return MetricRowModel(bleu=report.bleu, rouge_l=report.rouge_l,
                          cider=report.cider, entropy=report.entropy,
                          spice_n=report.spice_n,
                          anp_generated=float(report.anp_generated),
                          anp_matched=float(report.anp_matched),
                          top_adjectives=report.top_adjectives,
                          num_candidates=report.num_candidates,
                          unk_tokens=report.unk_tokens)


def create_app() -> FastAPI:
    app = FastAPI(title="moodcap", version=__version__,
                  description="Sentiment-controllable attention captioner")
    registry: dict[str, LoadedModel] = {}
    counter = itertools.count(1)
    lock = threading.Lock()

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(DataError)
    async def _data_error(request, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(MoodcapError)
    async def _internal(request, exc):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        spec = SynthSpec(n_images=req.n_images, regions=req.regions,
                         feature_dim=req.feature_dim, n_objects=req.objects)
        corpus = synth_toy_corpus(spec, seed=req.seed)
        return SynthResponse(paths=write_synth_corpus(corpus, req.out_dir))

    @app.post("/gradcheck", response_model=GradcheckResponse)
    def gradcheck(req: GradcheckRequest) -> GradcheckResponse:
        mconfig = None
        if req.dims:
            base = gradcheck_model_config(Variant(req.variant)).to_dict()
            base.update(req.dims)
            mconfig = ModelConfig.from_dict(base)
        report = run_gradcheck(eps=req.eps, seed=req.seed,
                               variant=Variant(req.variant), mconfig=mconfig)
        worst_param = max(report, key=report.get)
        worst = report[worst_param]
        return GradcheckResponse(passed=worst < GRADCHECK_TOLERANCE, worst=worst,
                                 worst_param=worst_param,
                                 tolerance=GRADCHECK_TOLERANCE, per_param=report)

    @app.post("/train", response_model=TrainResponse)
    def train_endpoint(req: TrainRequest) -> TrainResponse:
        cfg = RunConfig.from_dict(req.config)
        if not (cfg.paths.features and cfg.paths.train_captions):
            raise ConfigError("config needs paths.features and paths.train_captions")
        rows = D.read_caption_file(cfg.paths.train_captions)
        if not rows:
            raise DataError(f"{cfg.paths.train_captions}: no caption records")
        vocab = Vocabulary.build([r.text for r in rows], min_count=cfg.model.min_count,
                                 cap=cfg.model.vocab_cap)
        records = D.make_records(rows, vocab, max_len=cfg.decode.max_len)
        from .cli import assemble_corpus, check_feature_coverage

        records = assemble_corpus(records)[0]
        features = D.load_features(cfg.paths.features)
        check_feature_coverage(records, features)
        val_records = None
        if cfg.paths.val_captions:
            val_records = D.make_records(D.read_caption_file(cfg.paths.val_captions),
                                         vocab, max_len=cfg.decode.max_len)
        result = train(records, features, vocab, cfg.model_config(len(vocab)),
                       cfg.train_config(), val_records=val_records,
                       checkpoint_dir=cfg.paths.checkpoint_dir)
        return TrainResponse(
            best_epoch=result.best_epoch,
            checkpoints=result.checkpoint_paths,
            log=[EpochLogModel(epoch=l.epoch, l1_xent=l.l1_xent, l1_reg=l.l1_reg,
                               l2=l.l2, total=l.total, val_metric=l.val_metric)
                 for l in result.logs],
            vocab_size=len(vocab))

    @app.post("/models/load", response_model=ModelInfo)
    def load_model(req: LoadModelRequest) -> ModelInfo:
        params, config, vocab = load_checkpoint(req.checkpoint)
        with lock:
            model_id = f"m{next(counter)}"
            registry[model_id] = LoadedModel(model_id, req.checkpoint, params,
                                             config, vocab)
        return registry[model_id].info()

    @app.get("/models", response_model=ModelListResponse)
    def list_models() -> ModelListResponse:
        return ModelListResponse(models=[m.info() for m in registry.values()])

    @app.delete("/models/{model_id}")
    def unload_model(model_id: str) -> dict:
        if model_id not in registry:
            raise HTTPException(status_code=404, detail=f"no model {model_id!r}")
        with lock:
            registry.pop(model_id, None)
        return {"unloaded": model_id}

    def _resolve_model(model_id: str) -> LoadedModel:
        model = registry.get(model_id)
        if model is None:
            raise HTTPException(status_code=404, detail=f"no model {model_id!r}")
        return model

    @app.post("/models/{model_id}/generate", response_model=GenerateResponse)
    def generate(model_id: str, req: GenerateRequest) -> GenerateResponse:
        model = _resolve_model(model_id)
        config = model.config
        if req.grid is not None:
            feats = SpatialFeatures(req.image_id, req.grid)
            store = D.FeatureStore({req.image_id: feats})
            image_ids = [req.image_id]
        elif req.features_path is not None:
            store = D.load_features(req.features_path)
            image_ids = req.image_ids or store.image_ids
        else:
            raise ConfigError("request needs either features_path or an inline grid")
        if req.contrastive:
            if not config.variant.has_gate_sentiment:
                raise ConfigError("contrastive generation needs a sentiment-aware variant")
            sentiments: list[Sentiment | None] = list(Sentiment)
        elif req.sentiment is not None:
            sentiments = [Sentiment.from_name(req.sentiment)]
        elif config.variant.has_gate_sentiment:
            sentiments = [Sentiment.POSITIVE, Sentiment.NEGATIVE]
        else:
            sentiments = [None]
        pairs = [(i, s) for i in image_ids for s in sentiments]
        lines = generate_captions(model.params, config, model.vocab, store, pairs,
                                  max_len=req.max_len, beam_width=req.beam_width,
                                  length_penalty=req.length_penalty,
                                  suppress_unk=req.suppress_unk)
        captions = []
        for line in lines:
            captions.append(CaptionModel(
                image_id=line.image_id,
                sentiment=line.sentiment.short if line.sentiment is not None else "none",
                caption=line.text,
                log_prob=line.log_prob,
                attention=[a.tolist() for a in line.attention] if req.include_attention else None))
        return GenerateResponse(captions=captions)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        from .cli import read_generated_file, reference_records_from_rows

        if req.candidates is not None:
            lines = [GeneratedLine(c.image_id,
                                   None if c.sentiment == "none"
                                   else Sentiment.from_name(c.sentiment),
                                   D.normalize(c.caption), 0.0, [])
                     for c in req.candidates]
        elif req.generated_path is not None:
            lines = read_generated_file(req.generated_path)
        else:
            raise ConfigError("request needs either candidates or generated_path")
        ref_records = reference_records_from_rows(D.read_caption_file(req.references_path))
        lexicon = D.load_lexicon(req.lexicon_path)
        polarities = ["pos", "neg"] if req.sentiment == "both" else [req.sentiment]
        rows: dict[str, MetricRowModel] = {}
        reports = []
        for polarity in polarities:
            wanted = Sentiment.from_name(polarity)
            cands = [l for l in lines if l.sentiment is wanted]
            if not cands:
                cands = [GeneratedLine(l.image_id, wanted, l.words, l.log_prob, [])
                         for l in lines if l.sentiment is None]
            if not cands:
                raise DataError(f"no candidates for sentiment {polarity!r}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                report = evaluate_lines(cands, ref_records, lexicon, polarity=polarity,
                                        per_image_anps=req.per_image_anps)
            reports.append(report)
            rows[polarity] = _report_model(report)
        average = None
        if len(reports) > 1:
            average = MetricRowModel(
                bleu=[sum(r.bleu[i] for r in reports) / len(reports) for i in range(4)],
                rouge_l=sum(r.rouge_l for r in reports) / len(reports),
                cider=sum(r.cider for r in reports) / len(reports),
                entropy=sum(r.entropy for r in reports) / len(reports),
                spice_n=sum(r.spice_n for r in reports) / len(reports),
                anp_generated=sum(r.anp_generated for r in reports) / len(reports),
                anp_matched=sum(r.anp_matched for r in reports) / len(reports),
                top_adjectives=[], num_candidates=sum(r.num_candidates for r in reports),
                unk_tokens=sum(r.unk_tokens for r in reports))
        return EvaluateResponse(rows=rows, average=average)

    return app
