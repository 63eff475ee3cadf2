"""
Logging setup and the FastAPI application factory
"""

import logging
from datetime import datetime
from typing import Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .api_endpoints import all_routers
from .config import Settings, current_settings
from .exceptions import CoCarryError
from .models import ErrorResponse

logger = logging.getLogger(__name__)

_LOGGING_CONFIGURED = False


def configure_logging(settings: Settings = current_settings, level: Optional[str] = None, force: bool = False) -> None:
    """
    Install the root log handler once

    Plain text by default; JSON lines when ``settings.log_json`` is set.
    A file handler is added when ``settings.log_file`` is given.

    Args:
        settings: Process settings
        level: Overrides ``settings.log_level``
        force: Replace handlers installed by an earlier call
    """
    global _LOGGING_CONFIGURED
    if _LOGGING_CONFIGURED and not force:
        if level is not None:
            logging.getLogger().setLevel(level.upper())
        return

    if settings.log_json:
        from pythonjsonlogger import jsonlogger

        formatter: logging.Formatter = jsonlogger.JsonFormatter(settings.log_format)
    else:
        formatter = logging.Formatter(settings.log_format)

    handlers: list = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file, encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(formatter)

    logging.basicConfig(level=(level or settings.log_level).upper(), handlers=handlers, force=True)
    _LOGGING_CONFIGURED = True


def create_application() -> FastAPI:
    """Create and configure the FastAPI application"""

    app = FastAPI(
        title=current_settings.app_name,
        description="Ergonomic posture optimization and model-predictive impedance control for human-robot co-carrying",
        version=current_settings.app_version,
        docs_url="/docs",
        redoc_url="/redoc",
    )

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(CoCarryError)
    async def cocarry_error_handler(request: Request, exc: CoCarryError):
        logger.warning(f"⚠️ {request.url.path}: {exc.error_code}: {exc.message}")
        body = ErrorResponse(**exc.to_dict())
        return JSONResponse(status_code=422, content=body.model_dump())

    @app.on_event("startup")
    async def startup_event():
        logger.info("🚀 Starting Co-Carrying Ergonomics API...")
        logger.info(f"Environment: {current_settings.environment}")
        logger.info(f"Debug mode: {current_settings.debug}")

    @app.on_event("shutdown")
    async def shutdown_event():
        logger.info("🛑 Shutting down Co-Carrying Ergonomics API...")

    @app.get("/")
    async def root():
        """API Root endpoint with basic information"""
        prefix = current_settings.api_v1_prefix
        return {
            "message": current_settings.app_name,
            "version": current_settings.app_version,
            "status": "active",
            "environment": current_settings.environment,
            "endpoints": {
                "docs": "/docs",
                "health": "/health",
                "ergonomics": f"{prefix}/ergonomics/",
                "manipulability": f"{prefix}/manipulability/",
                "ik": f"{prefix}/ik/",
                "posture": f"{prefix}/posture/",
                "poses": f"{prefix}/poses/",
                "trajectory": f"{prefix}/trajectory/",
                "pipeline": f"{prefix}/pipeline/",
            },
        }

    @app.get("/health")
    async def health_check():
        """Health check endpoint"""
        return {
            "status": "healthy",
            "timestamp": datetime.now().isoformat(),
            "environment": current_settings.environment,
            "version": current_settings.app_version,
        }

    for router in all_routers:
        app.include_router(router, prefix=current_settings.api_v1_prefix)

    return app


def run_server(host: Optional[str] = None, port: Optional[int] = None) -> None:
    """Run the HTTP service"""
    host = host or current_settings.host
    port = port or current_settings.port
    configure_logging(current_settings)
    logger.info(f"🌐 Starting server on {host}:{port}")
    logger.info(f"📚 API Documentation: http://{host}:{port}/docs")

    if current_settings.reload:
        uvicorn.run(
            "cocarry.startup:create_application",
            host=host,
            port=port,
            reload=True,
            log_level=current_settings.log_level.lower(),
            factory=True,
        )
    else:
        uvicorn.run(
            create_application(),
            host=host,
            port=port,
            log_level=current_settings.log_level.lower(),
            workers=current_settings.workers,
        )
