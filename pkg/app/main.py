from contextlib import asynccontextmanager

from fastapi import FastAPI
from loguru import logger

from app.api.routes import router as api_router
from app.config import config
from app.utils.logging import setup_logging

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging(config.log_level)
    logger.info(f"Starting log-linear SRM service ({config.environment})")
    yield
    logger.info("Shutting down log-linear SRM service")


app = FastAPI(
    title="Log-linear SRM Service",
    description="Floored log-linear model fitting and structural risk minimization",
    version=VERSION,
    lifespan=lifespan,
)

app.include_router(api_router)


@app.get("/")
async def root():
    return {"service": "loglin-srm", "status": "running", "version": VERSION}


@app.get("/health")
async def health_check():
    return {"status": "healthy", "components": {"api": "ok"}}


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host=config.api_host, port=config.api_port, reload=config.api_debug)
