"""
DeskMT: Request/Response Models
===============================
Pydantic models for translation server request validation and response formatting.

Author: DeskMT Team
Date: 2026-02-10
"""

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class TranslateRequest(BaseModel):
    """
    Request model for batch translation.

    ``beam`` and ``alpha`` fall back to the server configuration when omitted.
    """

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "text": ["das ist ein Test .", "guten Morgen"],
                "beam": 4,
                "alpha": 0.6,
            }
        },
    )

    text: List[str] = Field(
        ...,
        description="Tokenized (and subword-segmented) source sentences"
    )
    beam: Optional[int] = Field(
        default=None,
        ge=1,
        le=64,
        description="Beam size (1 selects greedy decoding)"
    )
    alpha: Optional[float] = Field(
        default=None,
        ge=0.0,
        description="Length penalty exponent"
    )

    @field_validator("text")
    @classmethod
    def validate_text(cls, v: List[str]) -> List[str]:
        """Reject control characters other than blanks and tabs"""
        for i, line in enumerate(v):
            if any(ord(ch) < 32 and ch != "\t" for ch in line):
                raise ValueError(f"text[{i}] contains control characters")
        return v


class TranslateResponse(BaseModel):
    """Translations aligned index-for-index with the request text."""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "translations": ["this is a test .", "good morning"]
            }
        }
    )

    translations: List[str] = Field(
        ...,
        description="Detokenized-subword translations in request order"
    )


class HealthResponse(BaseModel):
    """Health check response model"""

    status: str = Field(
        ...,
        description="Service health status"
    )
    model: str = Field(
        ...,
        description="Loaded model (or ensemble) name"
    )
    beam: int = Field(
        ...,
        description="Default beam size"
    )


class ErrorResponse(BaseModel):
    """
    Standard error response model.
    """

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "error": True,
                "detail": "batch of 80 sentences exceeds the limit of 64",
                "status_code": 413
            }
        }
    )

    error: bool = Field(
        default=True,
        description="Always true for error responses"
    )
    detail: str = Field(
        ...,
        description="Error message"
    )
    status_code: int = Field(
        ...,
        description="HTTP status code"
    )
